use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;

/// Indices into the AD and depression training lists.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub ad: Vec<usize>,
    pub dep: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ad.len() + self.dep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn shuffled<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

/// Draws `want` indices from a stream that reshuffles each time it runs dry.
struct Cycle {
    n: usize,
    order: Vec<usize>,
    pos: usize,
}

impl Cycle {
    fn take<R: Rng + ?Sized>(&mut self, want: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(want);
        while out.len() < want {
            if self.pos == self.order.len() {
                self.order = shuffled(self.n, rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// One epoch of batches.
///
/// With both streams present every full batch holds `⌈bs/2⌉` AD and
/// `⌊bs/2⌋` depression samples. The larger stream (by its share per batch)
/// is consumed without replacement and ends the epoch; the smaller one
/// reshuffles and cycles. The final batch carries the larger stream's
/// remainder and a proportional share of the smaller stream. With one stream
/// empty the other is split into plain shuffled batches.
pub fn make_balanced_batches<R: Rng + ?Sized>(
    num_ad: usize,
    num_dep: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Batch>, TrainError> {
    if batch_size == 0 {
        return Err(TrainError::Config("batch_size must be at least 1".into()));
    }
    if num_ad == 0 && num_dep == 0 {
        return Err(TrainError::EmptyCorpus);
    }
    if num_ad == 0 || num_dep == 0 {
        let order = shuffled(num_ad.max(num_dep), rng);
        return Ok(order
            .chunks(batch_size)
            .map(|c| if num_ad > 0 { Batch { ad: c.to_vec(), dep: vec![] } } else { Batch { ad: vec![], dep: c.to_vec() } })
            .collect());
    }
    let ad_share = batch_size.div_ceil(2);
    let dep_share = batch_size / 2;
    if dep_share == 0 {
        return Err(TrainError::Config("joint batches need batch_size ≥ 2".into()));
    }
    // Batches needed to exhaust each stream once.
    let ad_batches = num_ad.div_ceil(ad_share);
    let dep_batches = num_dep.div_ceil(dep_share);
    let ad_leads = ad_batches >= dep_batches;
    let (lead_n, lead_share, trail_n, trail_share) =
        if ad_leads { (num_ad, ad_share, num_dep, dep_share) } else { (num_dep, dep_share, num_ad, ad_share) };

    let lead = shuffled(lead_n, rng);
    let mut trail = Cycle { n: trail_n, order: shuffled(trail_n, rng), pos: 0 };
    let mut out = Vec::with_capacity(lead_n.div_ceil(lead_share));
    for chunk in lead.chunks(lead_share) {
        let want = if chunk.len() == lead_share {
            trail_share
        } else {
            ((chunk.len() * trail_share) as f64 / lead_share as f64).round().max(1.0) as usize
        };
        let other = trail.take(want, rng);
        out.push(if ad_leads { Batch { ad: chunk.to_vec(), dep: other } } else { Batch { ad: other, dep: chunk.to_vec() } });
    }
    Ok(out)
}
