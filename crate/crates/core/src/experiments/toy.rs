//! Two-cluster 2-D point cloud: 80 points around (-1, 2) and 20 around
//! (0.2, 0.2). Group id 0 marks the large cluster, 1 the small one.

use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::linalg::Matrix;
use crate::models::Dataset;
use crate::rng::stream_rng;

pub const TOY_MAJOR: (usize, [f64; 2], f64) = (80, [-1.0, 2.0], 0.4);
pub const TOY_MINOR: (usize, [f64; 2], f64) = (20, [0.2, 0.2], 0.6);

/// 100 points; the covariances are `0.4 I` and `0.6 I`.
pub fn gen_two_gaussian_toy(seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, 0);
    let mut data = Vec::with_capacity(200);
    let mut groups = Vec::with_capacity(100);
    for (g, (count, mean, var)) in [TOY_MAJOR, TOY_MINOR].into_iter().enumerate() {
        let noise = Normal::new(0.0, var.sqrt()).expect("positive variance");
        for _ in 0..count {
            data.push(mean[0] + noise.sample(&mut rng));
            data.push(mean[1] + noise.sample(&mut rng));
            groups.push(g);
        }
    }
    let features = Matrix::from_vec(groups.len(), 2, data).expect("toy shape");
    Dataset::new(features, None, Some(groups)).expect("toy data is finite")
}
