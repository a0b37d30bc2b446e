//! Spatial InfoNCE, k-means and the cluster-aware temporal loss on
//! random embeddings with planted structure.

use curl_core::losses::{kmeans, spatial_info_nce, temporal_loss, TemporalParams, KMEANS_MAX_ITER, TAU_INS};
use curl_core::rng;
use rand_distr::{Distribution, StandardNormal};

fn noisy(base: &[Vec<f64>], sigma: f64, r: &mut rng::Rng) -> Vec<Vec<f64>> {
    base.iter()
        .map(|v| {
            v.iter()
                .map(|x| {
                    let n: f64 = StandardNormal.sample(r);
                    x + sigma * n
                })
                .collect()
        })
        .collect()
}

fn main() -> curl_core::Result<()> {
    let mut r = rng::stream(3, &[]);
    let centers: Vec<Vec<f64>> = (0..4).map(|_| (0..16).map(|_| StandardNormal.sample(&mut r)).collect()).collect();
    let base: Vec<Vec<f64>> = (0..32).map(|i| centers[i % 4].clone()).collect();
    let a = noisy(&base, 0.3, &mut r);

    for sigma in [0.05, 0.5, 2.0] {
        let b = noisy(&a, sigma, &mut r);
        let s = spatial_info_nce(&a, &b, TAU_INS)?;
        println!("InfoNCE with view noise {sigma}: {:.4}", s.loss);
    }

    let c = kmeans(&a, 4, 0, KMEANS_MAX_ITER)?;
    println!("k-means: inertia {:.4} after {} iterations", c.inertia, c.iterations);
    println!("inertia trace {:?}", c.trace.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>());

    let params = TemporalParams { k: 4, ..Default::default() };
    let t = temporal_loss(&a, &noisy(&a, 0.05, &mut r), &params, 0)?;
    println!("temporal loss {:.4} = cluster term {:.4} - MI {:.4}", t.loss, t.cluster_term, t.mi);
    Ok(())
}
