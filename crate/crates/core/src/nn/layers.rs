//! Parameterized building blocks: affine layers, the Transformer encoder
//! block and sinusoidal positional encodings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::matrix::Matrix;
use super::params::{xavier_uniform, ParamId, ParamStore};
use super::real::Real;
use super::NnError;

/// Affine map `x·W + b` with `W: in×out`, `b: 1×out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(in_dim, out_dim, rng));
        let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, out_dim));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, NnError> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        let h = g.matmul(x, w)?;
        g.add_bias(h, b)
    }

    pub fn num_scalars(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Sizes of one encoder block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
}

impl EncoderDims {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.d_model == 0 || self.heads == 0 || self.d_ff == 0 {
            return Err(NnError::Config("encoder dimensions must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(NnError::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    /// Closed-form scalar count of one block.
    pub fn num_scalars(&self) -> usize {
        let d = self.d_model;
        4 * (d * d + d) + (d * self.d_ff + self.d_ff) + (self.d_ff * d + d) + 4 * d
    }
}

/// Post-norm Transformer encoder block.
///
/// Query/key/value/output projections are stored as full `d_model×d_model`
/// matrices; head `h` owns columns `h·d_k..(h+1)·d_k` of the query, key and
/// value projections and the matching rows of the output projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderBlockParams {
    pub dims: EncoderDims,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
}

impl EncoderBlockParams {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: EncoderDims,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        dims.validate()?;
        let d = dims.d_model;
        let query = Linear::init(store, &format!("{name}.attn.query"), d, d, rng);
        let key = Linear::init(store, &format!("{name}.attn.key"), d, d, rng);
        let value = Linear::init(store, &format!("{name}.attn.value"), d, d, rng);
        let output = Linear::init(store, &format!("{name}.attn.output"), d, d, rng);
        let ff_in = Linear::init(store, &format!("{name}.ff.in"), d, dims.d_ff, rng);
        let ff_out = Linear::init(store, &format!("{name}.ff.out"), dims.d_ff, d, rng);
        let norm1_gain = store.add(format!("{name}.norm1.gain"), Matrix::filled(1, d, T::one()));
        let norm1_bias = store.add(format!("{name}.norm1.bias"), Matrix::zeros(1, d));
        let norm2_gain = store.add(format!("{name}.norm2.gain"), Matrix::filled(1, d, T::one()));
        let norm2_bias = store.add(format!("{name}.norm2.bias"), Matrix::zeros(1, d));
        Ok(Self { dims, query, key, value, output, ff_in, ff_out, norm1_gain, norm1_bias, norm2_gain, norm2_bias })
    }
}

/// One encoder block over the rows of `x` (`N×d_model`).
///
/// Rows with `mask[i] == false` are excluded as attention keys and zeroed in
/// the output. Dropout with probability `dropout_p` is applied to the
/// attention weights and the feed-forward hidden layer when the graph is in
/// training mode.
pub fn encoder_block_forward<T: Real>(
    g: &mut Graph<'_, T>,
    x: Var,
    block: &EncoderBlockParams,
    mask: &[bool],
    dropout_p: f64,
) -> Result<Var, NnError> {
    let (n, d) = g.shape(x);
    let dims = block.dims;
    if d != dims.d_model {
        return Err(NnError::Shape(format!("encoder expects width {}, got {d}", dims.d_model)));
    }
    if mask.len() != n {
        return Err(NnError::Shape(format!("mask of {} for {n} rows", mask.len())));
    }
    let dk = dims.head_dim();
    let scale = T::of(1.0 / (dk as f64).sqrt());

    let q = block.query.forward(g, x)?;
    let k = block.key.forward(g, x)?;
    let v = block.value.forward(g, x)?;
    let mut heads = Vec::with_capacity(dims.heads);
    for h in 0..dims.heads {
        let qh = g.slice_cols(q, h * dk, dk)?;
        let kh = g.slice_cols(k, h * dk, dk)?;
        let vh = g.slice_cols(v, h * dk, dk)?;
        let scores = g.matmul_t(qh, kh)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax_rows(scores, Some(mask))?;
        let attn = g.dropout(attn, dropout_p)?;
        heads.push(g.matmul(attn, vh)?);
    }
    let merged = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
    let attended = block.output.forward(g, merged)?;

    let residual = g.add(x, attended)?;
    let (g1, b1) = (g.param(block.norm1_gain), g.param(block.norm1_bias));
    let h1 = g.layer_norm(residual, g1, b1)?;

    let ff = block.ff_in.forward(g, h1)?;
    let ff = g.relu(ff);
    let ff = g.dropout(ff, dropout_p)?;
    let ff = block.ff_out.forward(g, ff)?;

    let residual = g.add(h1, ff)?;
    let (g2, b2) = (g.param(block.norm2_gain), g.param(block.norm2_bias));
    let out = g.layer_norm(residual, g2, b2)?;
    if mask.iter().all(|&m| m) {
        Ok(out)
    } else {
        g.zero_rows(out, mask)
    }
}

/// Sinusoidal position table: `PE[p, 2i] = sin(p / 10000^(2i/d))`,
/// `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn sinusoidal_positions<T: Real>(rows: usize, d_model: usize) -> Matrix<T> {
    Matrix::from_fn(rows, d_model, |p, j| {
        let i = (j / 2) as f64;
        let angle = p as f64 / 10000f64.powf(2.0 * i / d_model as f64);
        T::of(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_dims() -> EncoderDims {
        EncoderDims { d_model: 8, heads: 2, d_ff: 16 }
    }

    #[test]
    fn dims_reject_indivisible_heads() {
        let dims = EncoderDims { d_model: 10, heads: 4, d_ff: 8 };
        assert!(dims.validate().is_err());
    }

    #[test]
    fn block_parameter_count_matches_closed_form() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dims = EncoderDims { d_model: 128, heads: 4, d_ff: 512 };
        EncoderBlockParams::init(&mut store, "b", dims, &mut rng).unwrap();
        assert_eq!(store.num_scalars(), dims.num_scalars());
    }

    #[test]
    fn single_row_with_identity_attention_is_layer_normed_input() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = small_dims();
        let block = EncoderBlockParams::init(&mut store, "b", dims, &mut rng).unwrap();
        for lin in [block.query, block.key, block.value, block.output] {
            *store.get_mut(lin.weight) = Matrix::identity(8);
        }
        for lin in [block.ff_in, block.ff_out] {
            let (r, c) = store.get(lin.weight).shape();
            *store.get_mut(lin.weight) = Matrix::zeros(r, c);
        }
        let x = Matrix::row_vector(vec![0.3, -1.2, 2.0, 0.1, 0.0, 0.7, -0.4, 1.5]);
        let mut g = Graph::new(&store);
        let xv = g.constant(x.clone());
        let y = encoder_block_forward(&mut g, xv, &block, &[true], 0.0).unwrap();
        let got = g.value(y).clone();

        let mean = x.sum() / 8.0;
        let var = x.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        let want = x.map(|v| (v - mean) / var.sqrt());
        assert!(got.max_abs_diff(&want) < 1e-4, "{got:?} vs {want:?}");
    }

    #[test]
    fn masked_rows_are_zeroed() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let block = EncoderBlockParams::init(&mut store, "b", small_dims(), &mut rng).unwrap();
        let x = Matrix::from_fn(3, 8, |i, j| ((i * 8 + j) as f64 * 0.37).sin());
        let mut g = Graph::new(&store);
        let xv = g.constant(x);
        let y = encoder_block_forward(&mut g, xv, &block, &[true, true, false], 0.0).unwrap();
        assert!(g.value(y).row(2).iter().all(|&v| v == 0.0));
        assert!(g.value(y).row(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn positional_table_starts_with_sin_cos_of_zero() {
        let pe = sinusoidal_positions::<f64>(3, 4);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.get(1, 0) - 1f64.sin()).abs() < 1e-15);
        assert!((pe.get(1, 2) - (1.0f64 / 100.0).sin()).abs() < 1e-15);
    }
}
