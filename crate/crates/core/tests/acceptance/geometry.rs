use geoscope_core::geometry::{
    compose_to_global, crop_frame, point_to_pixels, to_relative, FrameBox, FrameChain, NormBox, PixelPoint,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn random_box(rng: &mut ChaCha8Rng, min_extent: i64) -> NormBox {
    let x1 = rng.random_range(0..=1000 - min_extent);
    let y1 = rng.random_range(0..=1000 - min_extent);
    let x2 = rng.random_range(x1 + min_extent..=1000);
    let y2 = rng.random_range(y1 + min_extent..=1000);
    NormBox::new(x1, y1, x2, y2).unwrap()
}

/// Continuous position of a relative box inside the realized pixel frames,
/// walked by hand from the image origin.
fn oracle(canvas: (u32, u32), frames: &[FrameBox], n: &NormBox) -> [f64; 4] {
    let (mut ox, mut oy) = (0.0f64, 0.0f64);
    for f in frames {
        ox += f.x_min as f64;
        oy += f.y_min as f64;
    }
    let last = frames.last().unwrap();
    let (w, h) = (last.width as f64, last.height as f64);
    let px = |u: i32| ox + u as f64 * w / 1000.0;
    let py = |v: i32| oy + v as f64 * h / 1000.0;
    let gx = |p: f64| p / canvas.0 as f64 * 1000.0;
    let gy = |p: f64| p / canvas.1 as f64 * 1000.0;
    [gx(px(n.x1())), gy(py(n.y1())), gx(px(n.x2())), gy(py(n.y2()))]
}

/// Applies the one-unit widening of boxes whose edges round together.
/// Returns whether any axis collapsed.
fn widen_collapsed(b: &mut [f64; 4]) -> bool {
    let mut collapsed = false;
    for (lo, hi) in [(0, 2), (1, 3)] {
        if b[lo].round() == b[hi].round() {
            collapsed = true;
            if b[lo].round() < 1000.0 {
                b[hi] = b[lo] + 1.0;
            } else {
                b[lo] = b[hi] - 1.0;
            }
        }
    }
    collapsed
}

/// Same box through the ideal nested rectangles, ignoring pixel snapping.
fn ideal(crops: &[NormBox], n: &NormBox) -> [f64; 4] {
    let mut r = [0.0, 0.0, 1000.0, 1000.0];
    for b in crops.iter().chain(std::iter::once(n)) {
        let (w, h) = (r[2] - r[0], r[3] - r[1]);
        r = [
            r[0] + b.x1() as f64 * w / 1000.0,
            r[1] + b.y1() as f64 * h / 1000.0,
            r[0] + b.x2() as f64 * w / 1000.0,
            r[1] + b.y2() as f64 * h / 1000.0,
        ];
    }
    r
}

fn collapsed_axis(b: &[f64; 4], k: usize) -> bool {
    let (lo, hi) = if k.is_multiple_of(2) { (0, 2) } else { (1, 3) };
    (b[hi] - b[lo] - 1.0).abs() < 1e-12
}

pub fn run() -> Result<String, String> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e0);

    let mut worst_ratio = 0.0f64;
    for _ in 0..10_000 {
        let w = rng.random_range(1..=20_000u32);
        let h = rng.random_range(1..=20_000u32);
        let roi = FrameBox::new("f", rng.random_range(0..50_000), rng.random_range(0..50_000), w, h).unwrap();
        let p = PixelPoint::new(
            roi.x_min as f64 + rng.random_range(0.0..=w as f64),
            roi.y_min as f64 + rng.random_range(0.0..=h as f64),
        );
        let back = point_to_pixels(to_relative(p, &roi).map_err(|e| e.to_string())?, &roi);
        let (bx, by) = (w as f64 / 2000.0 + 1e-9, h as f64 / 2000.0 + 1e-9);
        let (ex, ey) = ((back.x - p.x).abs(), (back.y - p.y).abs());
        ensure!(ex <= bx && ey <= by, "round trip {p:?} in {roi:?} came back as {back:?}");
        worst_ratio = worst_ratio.max(ex / bx).max(ey / by);
    }

    let mut worst = 0.0f64;
    let mut worst_ideal = 0.0f64;
    let mut collapsed = 0;
    for _ in 0..1_000 {
        let canvas = (rng.random_range(4096..=16384u32), rng.random_range(4096..=16384u32));
        let mut chain = FrameChain::global(canvas.0, canvas.1, "v0").unwrap();
        let mut crops = Vec::new();
        for depth in 1..=3 {
            let inner = chain.innermost().clone();
            let b = random_box(&mut rng, 100);
            let f = crop_frame(chain.view_id(), inner.width, inner.height, &b).map_err(|e| e.to_string())?;
            chain = chain.push(f, format!("v{depth}")).map_err(|e| e.to_string())?;
            crops.push(b);
        }
        ensure!(chain.depth() == 3, "chain depth {}", chain.depth());
        let n = random_box(&mut rng, 1);
        let got = compose_to_global(&n, &chain).map_err(|e| e.to_string())?;
        let frames: Vec<FrameBox> = chain.links().iter().map(|l| l.frame.clone()).collect();
        let mut want = oracle(canvas, &frames, &n);
        if widen_collapsed(&mut want) {
            collapsed += 1;
        }
        let ideal = ideal(&crops, &n);
        for (k, g) in got.coords().iter().enumerate() {
            let d = (*g as f64 - want[k]).abs();
            ensure!(d <= 1.0, "compose {n:?} through {frames:?}: got {got:?}, oracle {want:?}");
            worst = worst.max(d);
            if !collapsed_axis(&want, k) {
                worst_ideal = worst_ideal.max((*g as f64 - ideal[k]).abs());
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2}s");
    Ok(format!(
        "10000 round trips (worst {:.0}% of bound), 1000 3-deep compositions (max {worst:.3} units, {worst_ideal:.3} from unsnapped crops, {collapsed} widened)",
        worst_ratio * 100.0
    ))
}
