use geoscope_core::reward::group_advantages;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-8;

fn pop_std(r: &[f64]) -> f64 {
    let n = r.len() as f64;
    let m = r.iter().sum::<f64>() / n;
    (r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn run() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_mean = 0.0f64;
    let mut worst_shift = 0.0f64;
    let mut exact_only = 0;
    let trials = 5_000;
    for trial in 0..trials {
        let g = rng.random_range(2..=64usize);
        let r: Vec<f64> = match trial % 4 {
            // Ties and degenerate groups.
            0 => vec![rng.random_range(-2.0..3.0); g],
            1 => (0..g).map(|_| [-0.8, 0.1, 2.6][rng.random_range(0..3)]).collect(),
            _ => (0..g).map(|_| rng.random_range(-0.8..3.5)).collect(),
        };
        let a = group_advantages(&r).map_err(|e| e.to_string())?.advantages;
        let mean = a.iter().sum::<f64>() / g as f64;
        ensure!(mean.abs() < 1e-9, "mean advantage {mean} for {r:?}");
        worst_mean = worst_mean.max(mean.abs());

        let c = rng.random_range(0.01..100.0);
        let k = rng.random_range(-10.0..10.0);
        let shifted: Vec<f64> = r.iter().map(|x| c * x + k).collect();
        let b = group_advantages(&shifted).map_err(|e| e.to_string())?.advantages;
        let s = pop_std(&r);
        let cs = pop_std(&shifted);
        // The stabilizer does not scale with c, so exact invariance holds up
        // to the factor c(s + eps) / (cs + eps).
        let factor = if s == 0.0 { 1.0 } else { c * (s + EPS) / (cs + EPS) };
        for (x, y) in a.iter().zip(&b) {
            ensure!((y - x * factor).abs() <= 1e-6, "c={c} k={k}: {x} -> {y} on {r:?}");
            if s >= 1e-2 {
                worst_shift = worst_shift.max((y - x).abs());
            }
        }
        if s >= 1e-2 {
            ensure!(
                a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-6),
                "not invariant under c={c} k={k} for {r:?}"
            );
        } else {
            exact_only += 1;
        }
    }
    Ok(format!(
        "{trials} groups (G 2..64): max |mean| {worst_mean:.1e}, max affine drift {worst_shift:.1e} ({exact_only} low-spread groups checked via the stabilizer factor)"
    ))
}
