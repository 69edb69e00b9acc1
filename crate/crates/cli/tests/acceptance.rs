//! End-to-end acceptance checks. Runs as a plain binary (`harness = false`)
//! and prints one PASS/FAIL line per criterion; exits nonzero on any failure.

use std::collections::HashSet;
use std::process::{Command, ExitCode};
use std::time::Instant;

use barcode_seg::data::{compose_scene, generate_scenes, random_scene_spec, Sample, SymbologyKind};
use barcode_seg::loss::{detection_loss, total_loss, total_loss_grad, LossWeights, SuperpixelTargets};
use barcode_seg::metrics::{evaluate_image, summarize, MatchMode};
use barcode_seg::network::{build_network, count_parameters, receptive_fields, Network, NetworkConfig};
use barcode_seg::pipeline::Detector;
use barcode_seg::postprocess::{min_area_rect, DetectParams, DetectedObject, Point, RotatedRect};
use barcode_seg::raster::{LabelMask, Plane};
use barcode_seg::trainer::{prepare_sample, sample_rng, validate, Phase, PreparedSample, TrainConfig, Trainer};
use barcode_seg::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1, 2

fn parameter_count() -> Outcome {
    let started = Instant::now();
    let n = count_parameters(&NetworkConfig::default());
    let secs = started.elapsed().as_secs_f64();
    check(n == 32962 && secs < 1.0, format!("{n} parameters (expected 32962) in {secs:.3}s"))
}

fn receptive_field_sequence() -> Outcome {
    let got = receptive_fields(&build_network(&NetworkConfig::default()));
    let expect = vec![3, 7, 11, 19, 35, 67, 131, 259, 267, 267];
    check(got == expect, format!("{got:?}"))
}

// ---------------------------------------------------------------- 3

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = Network::<f64>::init(NetworkConfig::with_classes(4), 2).map_err(err)?;
    // move off the ReLU kinks that zero biases create at the padded border
    for slice in net.parameter_slices_mut() {
        for p in slice.iter_mut() {
            *p += rng.random_range(-0.05..0.05);
        }
    }
    let data = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = Tensor::from_vec(Shape::new(1, 1, 16, 16), data).map_err(err)?;
    let ids = (0..16).map(|_| rng.random_range(0..4u8)).collect();
    let targets = [SuperpixelTargets {
        detect: Plane::from_fn(4, 4, |x, y| (x + 2 * y) % 3 == 0),
        class_id: Plane::from_vec(4, 4, ids).map_err(err)?,
    }];
    let weights = LossWeights::default();

    let (map, cache) = net.forward_cached(&x).map_err(err)?;
    let (_, gd, gc) = total_loss_grad(&map, &targets, &weights).map_err(err)?;
    let analytic: Vec<f64> = net.backward(&cache, &gd, gc.as_ref()).map_err(err)?.slices().concat();

    let h = 1e-6;
    let mut numeric = Vec::with_capacity(analytic.len());
    for s in 0..net.parameter_slices().len() {
        for i in 0..net.parameter_slices()[s].len() {
            let orig = net.parameter_slices()[s][i];
            let mut at = |v: f64| -> Result<f64, String> {
                net.parameter_slices_mut()[s][i] = v;
                let map = net.forward(&x).map_err(err)?;
                Ok(total_loss(&map, &targets, &weights).map_err(err)?.total)
            };
            let (plus, minus) = (at(orig + h)?, at(orig - h)?);
            net.parameter_slices_mut()[s][i] = orig;
            numeric.push((plus - minus) / (2.0 * h));
        }
    }
    let scale = analytic.iter().chain(&numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).abs()).fold(0.0f64, f64::max);
    let rel = worst / scale;
    let secs = started.elapsed().as_secs_f64();
    check(
        rel < 1e-4 && secs < 60.0,
        format!("{} parameters, relative error {rel:.2e} in {secs:.1}s", analytic.len()),
    )
}

// ---------------------------------------------------------------- 4

fn loss_fixture() -> Outcome {
    let pred = [0.9, 0.2, 0.3, 0.4];
    let targets = [true, false, false, false];
    let l = detection_loss(&pred, &targets, &LossWeights::default()).map_err(err)?;
    check((l.detection - 4.49809).abs() <= 1e-4, format!("L_det = {:.6}", l.detection))
}

// ---------------------------------------------------------------- 5

/// Smallest bounding box over the directions of every point pair; hull
/// edges are among those pairs.
fn brute_force_area(points: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for p in points {
        for q in points {
            let (dx, dy) = (q.x - p.x, q.y - p.y);
            let len = dx.hypot(dy);
            if len < 1e-12 {
                continue;
            }
            let (ux, uy) = (dx / len, dy / len);
            let (mut a0, mut a1, mut b0, mut b1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            for r in points {
                let a = r.x * ux + r.y * uy;
                let b = -r.x * uy + r.y * ux;
                a0 = a0.min(a);
                a1 = a1.max(a);
                b0 = b0.min(b);
                b1 = b1.max(b);
            }
            best = best.min((a1 - a0) * (b1 - b0));
        }
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

fn encloses(r: &RotatedRect, p: Point) -> bool {
    let t = r.angle.to_radians();
    let (dx, dy) = (p.x - r.center.x, p.y - r.center.y);
    let a = dx * t.cos() + dy * t.sin();
    let b = -dx * t.sin() + dy * t.cos();
    let tol = 1e-9 * (1.0 + r.width.max(r.height));
    a.abs() <= r.width / 2.0 + tol && b.abs() <= r.height / 2.0 + tol
}

fn random_points(seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..150);
    match seed % 3 {
        0 => (0..n)
            .map(|_| Point::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)))
            .collect(),
        // integer cells: duplicates and collinear runs
        1 => (0..n)
            .map(|_| Point::new(rng.random_range(0..8) as f64, rng.random_range(0..5) as f64))
            .collect(),
        _ => {
            let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let (c, s) = (t.cos(), t.sin());
            (0..n)
                .map(|_| {
                    let (a, b) = (rng.random_range(-60.0..60.0), rng.random_range(-4.0..4.0));
                    Point::new(a * c - b * s + 30.0, a * s + b * c - 10.0)
                })
                .collect()
        }
    }
}

fn geometry_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let points = random_points(seed);
        let r = min_area_rect(&points).map_err(err)?;
        let brute = brute_force_area(&points);
        let rel = (r.area() - brute).abs() / brute.max(1e-12);
        worst = worst.max(if brute == 0.0 { r.area() } else { rel });
        if let Some(p) = points.iter().find(|&&p| !encloses(&r, p)) {
            return Err(format!("set {seed}: ({}, {}) outside {r:?}", p.x, p.y));
        }
    }
    check(worst <= 1e-6, format!("100 sets, worst relative area error {worst:.2e}"))
}

// ---------------------------------------------------------------- 6

type PixelSet = HashSet<(usize, usize)>;

struct Fixture {
    mask: LabelMask,
    detections: Vec<DetectedObject>,
}

/// Objects are `(x0, y0, x1, y1, label)` pixel boxes, detections are
/// `(cx, cy, w, h, angle, class)`.
fn fixture(objects: &[(usize, usize, usize, usize, u8)], dets: &[(f64, f64, f64, f64, f64, Option<usize>)]) -> Fixture {
    let mut mask = Plane::new(32, 32, 0u8);
    for &(x0, y0, x1, y1, label) in objects {
        for y in y0..y1 {
            for x in x0..x1 {
                mask.set(x, y, label);
            }
        }
    }
    let detections = dets
        .iter()
        .map(|&(cx, cy, w, h, angle, class_id)| DetectedObject {
            rect: RotatedRect {
                center: Point::new(cx, cy),
                width: w,
                height: h,
                angle,
            },
            class_id,
            class_probs: vec![],
            component_area: 0,
        })
        .collect();
    Fixture { mask, detections }
}

fn hand_built_fixtures() -> Vec<Fixture> {
    vec![
        // exact cover, right class
        fixture(&[(4, 4, 20, 12, 1)], &[(12.0, 8.0, 16.0, 8.0, 0.0, Some(0))]),
        // detection far from the object
        fixture(&[(2, 2, 10, 10, 2)], &[(25.0, 25.0, 6.0, 6.0, 0.0, Some(1))]),
        // nothing to find, one false alarm
        fixture(&[], &[(16.0, 16.0, 8.0, 4.0, -30.0, Some(2))]),
        // nothing at all
        fixture(&[], &[]),
        // exact cover, wrong class
        fixture(&[(8, 8, 24, 16, 3)], &[(16.0, 12.0, 16.0, 8.0, 0.0, Some(0))]),
        // shifted by a quarter: J = 0.6
        fixture(&[(4, 4, 20, 12, 1)], &[(16.0, 8.0, 16.0, 8.0, 0.0, Some(0))]),
        // rotated detection over a square object
        fixture(&[(10, 10, 22, 22, 4)], &[(16.0, 16.0, 12.0, 12.0, -45.0, Some(3))]),
        // one wide detection spanning two objects
        fixture(
            &[(2, 4, 12, 12, 1), (18, 4, 28, 12, 2)],
            &[(15.0, 8.0, 26.0, 8.0, 0.0, Some(1))],
        ),
        // a good detection plus a small one inside the same object
        fixture(
            &[(4, 16, 28, 28, 2)],
            &[(16.0, 22.0, 24.0, 12.0, 0.0, Some(1)), (8.0, 20.0, 4.0, 4.0, 0.0, Some(1))],
        ),
        // two objects, one typed correctly, one untyped; a missed third object
        fixture(
            &[(1, 1, 9, 9, 1), (20, 2, 30, 10, 3), (4, 22, 12, 30, 4)],
            &[(5.0, 5.0, 8.0, 8.0, 0.0, Some(0)), (25.0, 6.0, 10.0, 8.0, 0.0, None)],
        ),
    ]
}

fn rect_pixels(r: &RotatedRect, w: usize, h: usize) -> PixelSet {
    let t = r.angle.to_radians();
    let mut s = PixelSet::new();
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 + 0.5 - r.center.x, y as f64 + 0.5 - r.center.y);
            let a = dx * t.cos() + dy * t.sin();
            let b = -dx * t.sin() + dy * t.cos();
            if a.abs() <= r.width / 2.0 && b.abs() <= r.height / 2.0 {
                s.insert((x, y));
            }
        }
    }
    s
}

fn set_jaccard(a: &PixelSet, b: &PixelSet) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

/// 8-connected components of the nonzero mask pixels.
fn components(mask: &LabelMask) -> Vec<PixelSet> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if mask.data()[start] == 0 || seen[start] {
            continue;
        }
        let mut comp = PixelSet::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            comp.insert((x, y));
            for ny in y.saturating_sub(1)..(y + 2).min(h) {
                for nx in x.saturating_sub(1)..(x + 2).min(w) {
                    let j = ny * w + nx;
                    if mask.data()[j] != 0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// D, R, P and accuracy with every object taking its best detection.
fn naive_metrics(fixtures: &[&Fixture], t: f64) -> (f64, f64, f64, Option<f64>) {
    let (mut good, mut objects, mut dets, mut hits, mut correct) = (0, 0, 0, 0, 0);
    for f in fixtures {
        let (w, h) = f.mask.dims();
        let gts = components(&f.mask);
        let det_sets: Vec<PixelSet> = f.detections.iter().map(|d| rect_pixels(&d.rect, w, h)).collect();
        let gt_all: PixelSet = gts.iter().flatten().copied().collect();
        let det_all: PixelSet = det_sets.iter().flatten().copied().collect();
        if set_jaccard(&gt_all, &det_all) >= t {
            good += 1;
        }
        objects += gts.len();
        dets += det_sets.len();
        for g in &gts {
            let mut counts = [0usize; 256];
            g.iter().for_each(|&(x, y)| counts[f.mask.get(x, y) as usize] += 1);
            let label = (1..256).fold(1, |best, l| if counts[l] > counts[best] { l } else { best });
            let best = det_sets
                .iter()
                .enumerate()
                .map(|(i, d)| (i, set_jaccard(g, d)))
                .fold(None, |acc: Option<(usize, f64)>, (i, j)| match acc {
                    Some((_, bj)) if bj >= j => acc,
                    _ => Some((i, j)),
                });
            if let Some((i, j)) = best {
                if j >= t {
                    hits += 1;
                    if f.detections[i].class_id == Some(label - 1) {
                        correct += 1;
                    }
                }
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    (
        good as f64 / fixtures.len() as f64,
        ratio(hits, objects),
        ratio(hits, dets),
        (hits > 0).then(|| correct as f64 / hits as f64),
    )
}

fn metrics_oracle() -> Outcome {
    let fixtures = hand_built_fixtures();
    let thresholds: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let mut sets: Vec<Vec<&Fixture>> = fixtures.iter().map(|f| vec![f]).collect();
    sets.push(fixtures.iter().collect());
    let mut compared = 0;
    for (k, set) in sets.iter().enumerate() {
        let evals: Vec<_> = set.iter().map(|f| evaluate_image(&f.mask, &f.detections)).collect();
        let result = summarize(&evals, &thresholds, MatchMode::Literal).map_err(err)?;
        for m in &result.thresholds {
            let naive = naive_metrics(set, m.threshold);
            let got = (m.detection_rate, m.recall, m.precision, m.classification_accuracy);
            if got != naive {
                return Err(format!("set {k} at T={}: {got:?} vs naive {naive:?}", m.threshold));
            }
            compared += 1;
        }
        for pair in result.thresholds.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.detection_rate > a.detection_rate || b.recall > a.recall || b.precision > a.precision {
                return Err(format!("set {k}: not monotone between T={} and T={}", a.threshold, b.threshold));
            }
        }
    }
    Ok(format!("{} fixtures, {compared} threshold points equal, curves monotone", fixtures.len()))
}

// ---------------------------------------------------------------- 7

const DESK_TRAIN: usize = 500;
const DESK_VAL: usize = 100;
const DESK_SIDE: usize = 256;
const DESK_BATCH: usize = 2;
const DESK_LR1: f64 = 1e-3;
const DESK_LR2: f64 = 3e-4;

fn desk_config() -> TrainConfig {
    TrainConfig {
        network: NetworkConfig::with_classes(SymbologyKind::ALL.len()),
        batch_size: DESK_BATCH,
        phase1: Phase { epochs: 10, lr: DESK_LR1 },
        phase2: Phase { epochs: 10, lr: DESK_LR2 },
        max_side: DESK_SIDE,
        seed: 7,
        ..TrainConfig::default()
    }
}

/// The generator's first EAN13-only scene, cut down to one symbol.
fn single_ean13_scene() -> Result<Sample, String> {
    let mut spec = random_scene_spec(DESK_SIDE, DESK_SIDE, &[SymbologyKind::Ean13], &mut ChaCha8Rng::seed_from_u64(0));
    spec.symbols.truncate(1);
    let scene = compose_scene(&spec).map_err(err)?;
    if scene.objects.len() != 1 {
        return Err(format!("EAN13 scene has {} objects", scene.objects.len()));
    }
    Ok(scene)
}

fn desk_training() -> Outcome {
    let started = Instant::now();
    let train = generate_scenes(DESK_TRAIN, DESK_SIDE, DESK_SIDE, &SymbologyKind::ALL, 1).map_err(err)?;
    let val = generate_scenes(DESK_VAL, DESK_SIDE, DESK_SIDE, &SymbologyKind::ALL, 2).map_err(err)?;
    let mut trainer = Trainer::new(desk_config(), SymbologyKind::names()).map_err(err)?;
    trainer
        .fit(&train, &[], |_, r| {
            eprintln!(
                "  desk epoch {:2} phase {} loss {:.4} (class {:.3}) [{:.0}s]",
                r.epoch, r.phase, r.train_loss.total, r.train_loss.classification, r.seconds
            );
            Ok(())
        })
        .map_err(err)?;
    let detector = Detector::new(trainer.net.clone(), DetectParams::default());
    let result = detector.evaluate(&val, &[0.5], MatchMode::Literal).map_err(err)?;
    let m = result.at(0.5).ok_or("no T=0.5 point")?;
    let acc = m.classification_accuracy.unwrap_or(0.0);

    let blank = Plane::new(DESK_SIDE, DESK_SIDE, 200u8);
    let blank_dets = detector.detect(&blank).map_err(err)?.len();
    let scene = single_ean13_scene()?;
    let ean = detector
        .detect(&scene.image)
        .map_err(err)?
        .iter()
        .filter(|d| d.class_id == Some(SymbologyKind::Ean13.class_id()))
        .count();
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    check(
        m.recall >= 0.90 && m.precision >= 0.80 && acc >= 0.60 && blank_dets == 0 && ean >= 1 && minutes <= 30.0,
        format!(
            "R {:.3} P {:.3} accuracy {acc:.3}; blank image {blank_dets} detections; EAN13 scene {ean} EAN13 detections; {minutes:.1} min",
            m.recall, m.precision
        ),
    )
}

// ---------------------------------------------------------------- 8

fn prepared(samples: &[Sample], config: &TrainConfig) -> Result<Vec<PreparedSample>, String> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| prepare_sample(s, config, &mut sample_rng(config.seed, 0, i)).map_err(err))
        .collect()
}

fn overfit() -> Outcome {
    let samples = generate_scenes(4, 128, 128, &SymbologyKind::ALL, 11).map_err(err)?;
    let config = TrainConfig {
        network: NetworkConfig::with_classes(4),
        batch_size: 4,
        max_side: 128,
        augment: None,
        seed: 3,
        ..TrainConfig::default()
    };
    let batch = prepared(&samples, &config)?;
    let refs: Vec<&PreparedSample> = batch.iter().collect();
    let mut trainer = Trainer::new(config.clone(), SymbologyKind::names()).map_err(err)?;
    let loss = |t: &Trainer| -> Result<f64, String> {
        let v = validate(&t.net, &samples, &config).map_err(err)?.ok_or("no validation")?;
        Ok(v.loss.total)
    };
    let initial = loss(&trainer)?;
    for _ in 0..200 {
        trainer.step(&refs, config.phase1.lr).map_err(err)?;
    }
    let last = loss(&trainer)?;
    check(
        last * 10.0 <= initial,
        format!("L_total {initial:.4} -> {last:.4} ({:.1}x)", initial / last),
    )
}

// ---------------------------------------------------------------- 9

fn latency() -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_bseg"))
        .args(["--threads", "1", "bench", "--size", "512", "--iterations", "30", "--warmup", "3", "--json"])
        .output()
        .map_err(err)?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(err)?;
    let median = report["median_ms"].as_f64().ok_or("no median_ms")?;
    check(median <= 250.0, format!("median {median:.1} ms at 512x512, 1 thread"))
}

// ---------------------------------------------------------------- 10

fn determinism() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(err)?;
    pool.install(|| {
        let scenes = |seed| -> Result<Vec<Sample>, String> {
            let mut v = generate_scenes(6, 128, 128, &SymbologyKind::ALL, seed).map_err(err)?;
            v.extend(generate_scenes(4, 192, 128, &SymbologyKind::ALL, seed + 1).map_err(err)?);
            Ok(v)
        };
        let (a, b) = (scenes(21)?, scenes(21)?);
        if a != b {
            return Err("generation differs under the same seed".into());
        }
        if a == scenes(22)? {
            return Err("generation ignores the seed".into());
        }

        let config = TrainConfig {
            network: NetworkConfig::with_classes(4),
            batch_size: 3,
            max_side: 192,
            seed: 5,
            ..TrainConfig::default()
        };
        let mut runs = Vec::new();
        for _ in 0..2 {
            let mut trainer = Trainer::new(config.clone(), SymbologyKind::names()).map_err(err)?;
            let plan = trainer.epoch_plan(&a, 0).map_err(err)?;
            let batch = prepared(&a, &config)?;
            let mut snapshots = Vec::new();
            for indices in plan.iter().take(3) {
                let refs: Vec<&PreparedSample> = indices.iter().map(|&i| &batch[i]).collect();
                trainer.step(&refs, config.phase1.lr).map_err(err)?;
                let bits: Vec<u32> = trainer.net.parameter_slices().concat().iter().map(|p| p.to_bits()).collect();
                snapshots.push(bits);
            }
            runs.push((plan, snapshots));
        }
        if runs[0].0 != runs[1].0 {
            return Err("batch plans differ".into());
        }
        if runs[0].1 != runs[1].1 {
            return Err("parameters differ after identical steps".into());
        }
        let moved = runs[0].1.windows(2).all(|w| w[0] != w[1]);
        check(
            moved,
            format!("generation, {} batches and 3 steps bitwise identical", runs[0].0.len()),
        )
    })
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("parameter count", parameter_count),
        ("receptive fields", receptive_field_sequence),
        ("gradient check", gradient_check),
        ("loss fixture", loss_fixture),
        ("geometry oracle", geometry_oracle),
        ("metrics oracle", metrics_oracle),
        ("desk training", desk_training),
        ("overfit", overfit),
        ("latency", latency),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = run();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
