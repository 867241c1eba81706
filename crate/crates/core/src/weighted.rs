//! Every TCF estimator here is a ratio of indicator-restricted sums of per-unit class
//! weights. The weights do not depend on the cut pair, so they are built once and
//! evaluated at as many cut pairs as needed.

use crate::data::{CutPair, EstimatorTag, TcfEstimate, NUM_CLASSES};
use crate::error::{Error, Result};

/// Raw (unnormalized) sums at one cut pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassSums {
    /// `sum_i w_ik`
    pub total: [f64; NUM_CLASSES],
    /// `sum_i I(t_i >= c_j) w_ik`, row j for cut j
    pub above: [[f64; NUM_CLASSES]; 2],
    /// `sum_i I(t_i < c_j) w_ik`
    pub below: [[f64; NUM_CLASSES]; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitWeights {
    t: Vec<f64>,
    w: Vec<[f64; NUM_CLASSES]>,
    tag: EstimatorTag,
    k: Option<usize>,
}

impl UnitWeights {
    pub fn new(t: Vec<f64>, w: Vec<[f64; NUM_CLASSES]>, tag: EstimatorTag, k: Option<usize>) -> Self {
        assert_eq!(t.len(), w.len());
        UnitWeights { t, w, tag, k }
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn weights(&self) -> &[[f64; NUM_CLASSES]] {
        &self.w
    }

    pub fn tag(&self) -> EstimatorTag {
        self.tag
    }

    pub fn k(&self) -> Option<usize> {
        self.k
    }

    pub fn sums(&self, cut: CutPair) -> ClassSums {
        let mut total = [0.0; NUM_CLASSES];
        let mut above = [[0.0; NUM_CLASSES]; 2];
        let mut below = [[0.0; NUM_CLASSES]; 2];
        let cuts = [cut.c1(), cut.c2()];
        for (&t, w) in self.t.iter().zip(&self.w) {
            for k in 0..NUM_CLASSES {
                total[k] += w[k];
            }
            for (j, &c) in cuts.iter().enumerate() {
                let side = if t >= c { &mut above[j] } else { &mut below[j] };
                for k in 0..NUM_CLASSES {
                    side[k] += w[k];
                }
            }
        }
        ClassSums { total, above, below }
    }

    /// TCF triple `(1 - B11/S1, (B12 - B22)/S2, B23/S3)`.
    pub fn tcf(&self, cut: CutPair) -> Result<TcfEstimate> {
        let s = self.sums(cut);
        for k in 0..NUM_CLASSES {
            if !(s.total[k] > 0.0) {
                return Err(Error::EmptyClass {
                    class: k + 1,
                    denominator: s.total[k],
                });
            }
        }
        let tcf = [
            1.0 - s.above[0][0] / s.total[0],
            (s.above[0][1] - s.above[1][1]) / s.total[1],
            s.above[1][2] / s.total[2],
        ];
        Ok(TcfEstimate::new(tcf, cut, self.tag, self.k))
    }
}
