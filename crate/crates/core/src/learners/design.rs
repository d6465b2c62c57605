//! Design-matrix expansion shared by every learner: intercept only,
//! intercept + main effects, or intercept + mains + all pairwise products.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignBasis {
    Intercept,
    Main,
    TwoWay,
}

impl DesignBasis {
    pub fn n_features(&self, p: usize) -> usize {
        match self {
            DesignBasis::Intercept => 1,
            DesignBasis::Main => 1 + p,
            DesignBasis::TwoWay => 1 + p + p * (p - 1) / 2,
        }
    }

    /// Expands raw predictor rows into the design matrix.
    pub fn expand(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let n = x.nrows();
        let p = x.ncols();
        let m = self.n_features(p);
        let mut out = Array2::zeros((n, m));
        for i in 0..n {
            out[[i, 0]] = 1.0;
            if matches!(self, DesignBasis::Main | DesignBasis::TwoWay) {
                for j in 0..p {
                    out[[i, 1 + j]] = x[[i, j]];
                }
            }
            if matches!(self, DesignBasis::TwoWay) {
                let mut k = 1 + p;
                for j in 0..p {
                    for l in (j + 1)..p {
                        out[[i, k]] = x[[i, j]] * x[[i, l]];
                        k += 1;
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn twoway_expansion_layout() {
        let x = array![[2.0, 3.0, 5.0]];
        let d = DesignBasis::TwoWay.expand(x.view());
        assert_eq!(
            d.row(0).to_vec(),
            vec![1.0, 2.0, 3.0, 5.0, 6.0, 10.0, 15.0]
        );
        assert_eq!(DesignBasis::TwoWay.n_features(3), 7);
        assert_eq!(DesignBasis::Main.n_features(3), 4);
        assert_eq!(DesignBasis::Intercept.n_features(3), 1);
    }
}
