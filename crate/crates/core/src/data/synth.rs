use super::Dataset;
use crate::numcore::{Rng, Scalar};

/// Gaussian blobs around class means placed on a grid in `[0.2, 0.8]^d`.
///
/// Class `c` is written in base `g = ⌈m^{1/d}⌉` (at least 2); its digits,
/// repeated cyclically across coordinates, pick grid levels. Samples are
/// ordered class by class and clipped to `[0, 1]`.
pub fn synth_blobs<S: Scalar>(rng: &mut Rng, m: usize, d: usize, per_class: usize, spread: f64) -> Dataset<S> {
    assert!(m >= 2 && d >= 1, "synth_blobs needs m ≥ 2 and d ≥ 1");
    let mut g = 2usize;
    while (g as f64).powi(d.min(64) as i32) < m as f64 {
        g += 1;
    }
    let digits = {
        let mut k = 1;
        while g.pow(k as u32) < m {
            k += 1;
        }
        k.min(d)
    };
    let means: Vec<Vec<f64>> = (0..m)
        .map(|c| {
            let ds: Vec<usize> = (0..digits).map(|i| (c / g.pow(i as u32)) % g).collect();
            (0..d)
                .map(|i| 0.2 + 0.6 * ds[i % digits] as f64 / (g - 1) as f64)
                .collect()
        })
        .collect();

    let mut features = Vec::with_capacity(m * per_class * d);
    let mut labels = Vec::with_capacity(m * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &mu in mean {
                let noise = if spread > 0.0 { spread * rng.normal() } else { 0.0 };
                features.push(S::lit((mu + noise).clamp(0.0, 1.0)));
            }
            labels.push(c);
        }
    }
    Dataset::new(
        features,
        labels,
        d,
        m,
        format!("synth_blobs(seed={}, m={m}, d={d}, n={per_class}, spread={spread})", rng.seed()),
    )
    .expect("generated data is valid")
}
