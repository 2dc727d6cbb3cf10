//! Kernel ridge regression with random feature maps.
//!
//! The crate covers the full pipeline for comparing exact kernel ridge
//! regression (KRR) with its random-feature approximation (RFM-KRR):
//!
//! * [`dataset`]: libsvm parsing, min-max scaling, target normalization,
//!   seeded train/test splits.
//! * [`kernel`]: RBF, Laplace and angular-similarity kernels, Gram
//!   matrices, the interpoint-distance bandwidth heuristic.
//! * [`feature_map`]: random Fourier and random sign features.
//! * [`krr`]: exact and random-feature ridge regression, primal and dual.
//! * [`bounds`]: the out-of-sample gap bound `(4b/s)‖K^{1/2}(K+nλI)⁻¹y‖²`
//!   and its companions.
//! * [`oracles`]: enumeration, quadrature and Monte Carlo checks of the
//!   moment inequalities behind the bound.
//! * [`harness`]: the MSE-vs-`s` and bound/MSE-vs-`n` experiments with
//!   CSV/JSON output.
//!
//! ```
//! use ndarray::array;
//! use rfmkrr::{FeatureMap, FeatureMode, KernelSpec, KrrModel, RfmModel};
//!
//! let x = array![[0.0, 0.1], [0.5, -0.2], [-0.4, 0.3], [0.9, 0.9]];
//! let y = array![0.2, -0.1, 0.4, -0.5];
//! let kernel = KernelSpec::rbf(1.0).unwrap();
//! let exact = KrrModel::fit(&x, &y, kernel, 0.05).unwrap();
//!
//! let fm = FeatureMap::for_kernel(&kernel, 2, 2000, 7, FeatureMode::Unbiased).unwrap();
//! let approx = RfmModel::fit(fm, &x, &y, 0.05).unwrap();
//!
//! let gap = &exact.predict(&x).unwrap() - &approx.predict(&x).unwrap();
//! assert!(gap.iter().all(|g| g.abs() < 0.05));
//! ```

// Links the BLAS implementation used by ndarray's matrix products.
extern crate blas_src;

mod blob;
pub mod bounds;
pub mod dataset;
pub mod error;
pub mod feature_map;
pub mod harness;
pub mod kernel;
pub mod krr;
pub mod linalg;
pub mod oracles;
pub mod rng;

pub use bounds::{BoundInputs, BoundReport};
pub use dataset::{Dataset, RawDataset, SplitSpec};
pub use error::{Error, Result};
pub use feature_map::{FeatureFamily, FeatureMap, FeatureMode};
pub use kernel::{KernelFamily, KernelSpec};
pub use krr::{KrrModel, RfmModel};
