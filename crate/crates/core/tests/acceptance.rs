//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run with `cargo test -p driftguard --test acceptance`.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use driftguard::drift::{fit_slope, score_trend, slot_means, t_stability_vector, DriftConfig};
use driftguard::eval::partial_auc_scored;
use driftguard::experiment::{run_comparison, Comparison, ComparisonConfig};
use driftguard::synth::{generate, DriftGroup, GroundTruth, SynthSpec, REFERENCE_BOUNDARY_SLOT};
use driftguard::trainer::{hinge_gradient, hinge_loss};
use driftguard::{Dataset, FeatureDictionary, Label, LinearModel, SparseSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Scored = Vec<(f64, Label)>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if let false = $cond {
            return Err(format!($($fmt)*));
        }
    };
}

struct Reference {
    dataset: Dataset,
    truth: GroundTruth,
    comparison: Comparison,
}

fn reference() -> &'static Reference {
    static REFERENCE: OnceLock<Reference> = OnceLock::new();
    REFERENCE.get_or_init(|| {
        let spec = SynthSpec::reference();
        let (dataset, truth) = generate(&spec).expect("reference dataset");
        let boundary = spec.slot_start(REFERENCE_BOUNDARY_SLOT).expect("boundary");
        let comparison = run_comparison(&dataset, &ComparisonConfig::new(boundary)).expect("reference comparison");
        Reference {
            dataset,
            truth,
            comparison,
        }
    })
}

// (name, printed delta, weight, slope) of 20 unstable features of an
// Android malware detector.
const ANDROID_ROWS: [(&str, f64, f64, f64); 20] = [
    ("urls::https://graph.facebook.com/%1$s?...&accessToken=%2$s", -0.008753, -0.596730, 0.014669),
    ("intents::android_intent_action_VIEW", -0.010168, -0.462059, 0.022005),
    ("urls::http://www.google.com", -0.021320, -0.436577, 0.048835),
    ("activities::com_revmob_ads_fullscreen_FullscreenActivity", -0.006204, -0.348884, 0.017782),
    ("activities::com_feiwo_view_IA", -0.004435, -0.347665, 0.012758),
    ("urls::http://i.ytimg.com/vi/", -0.005245, -0.319063, 0.016438),
    ("api_calls::android/content/ContentResolver;->openInputStream", -0.003749, -0.302131, 0.012410),
    ("urls::https://m.facebook.com/dialog/", -0.004955, -0.285100, 0.017379),
    ("urls::http://market.android.com/details?id=", -0.004041, -0.260522, 0.015510),
    ("urls::http://www.youtube.com/embed/", -0.004289, -0.259927, 0.016502),
    ("api_calls::android/net/wifi/WifiManager;->getConnectionInfo", -0.003469, 0.148022, -0.023438),
    ("app_permissions::name='android_permission_MOUNT_UNMOUNT_FILESYSTEMS'", -0.004508, 0.296193, -0.015220),
    ("urls::http://e.admob.com/clk?...", -0.006713, 0.427714, -0.015695),
    ("activities::com_feiwothree_coverscreen_SA", -0.003564, 0.443662, -0.008034),
    ("interesting_calls::Cipher(DES)", -0.008910, 0.489497, -0.018202),
    ("intents::android_intent_action_PACKAGE_ADDED", -0.022435, 0.702801, -0.031922),
    ("activities::com_fivefeiwo_coverscreen_SA", -0.003813, 0.743198, -0.005131),
    ("intents::android_intent_action_CREATE_SHORTCUT", -0.012456, 0.748091, -0.016650),
    ("intents::android_intent_action_USER_PRESENT", -0.021155, 0.803000, -0.026344),
    ("activities::com_feiwoone_coverscreen_SA", -0.010022, 1.141652, -0.008778),
];

fn android_delta_rows() -> Outcome {
    let weights: Vec<f64> = ANDROID_ROWS.iter().map(|r| r.2).collect();
    let slopes: Vec<f64> = ANDROID_ROWS.iter().map(|r| r.3).collect();
    let delta = t_stability_vector(&weights, &slopes);
    let misses: Vec<String> = ANDROID_ROWS
        .iter()
        .zip(&delta)
        .filter(|(row, d)| (*d - row.1).abs() > 5e-7)
        .map(|(row, d)| format!("{} computed {d:.9} printed {:.6} (|err| {:.2e})", row.0, row.1, (d - row.1).abs()))
        .collect();
    ensure!(misses.is_empty(), "{}/20 rows off by more than 5e-7: {}", misses.len(), misses.join("; "));
    Ok("20/20 rows within 5e-7".into())
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, density: f64) -> Dataset {
    let samples = (0..n)
        .map(|i| {
            let indices: Vec<u32> = (0..d as u32).filter(|_| rng.gen_bool(density)).collect();
            let label = if rng.gen_bool(0.5) { Label::Malware } else { Label::Goodware };
            SparseSample::new(format!("s{i}"), i as i64, label, indices).unwrap()
        })
        .collect();
    Dataset::new(FeatureDictionary::anonymous(d), samples).unwrap()
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    while instances < 100 {
        let d = rng.gen_range(1..=50);
        let n = rng.gen_range(1..=200);
        let density = rng.gen_range(0.05..0.5);
        let ds = random_dataset(&mut rng, n, d, density);
        let fp = ds.dictionary().fingerprint();
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = rng.gen_range(-1.0..1.0);
        let l2 = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..2.0) };
        let model = LinearModel::new(w.clone(), b, fp.clone()).unwrap();
        let kink = ds
            .samples()
            .iter()
            .any(|s| (s.label.signed() * model.score(s).unwrap() - 1.0).abs() < 1e-4);
        if kink {
            continue;
        }
        instances += 1;
        let grad = hinge_gradient(&model, &ds, l2).unwrap();
        let loss_at = |w: Vec<f64>, b: f64| hinge_loss(&LinearModel::new(w, b, fp.clone()).unwrap(), &ds, l2).unwrap();
        let mut analytic = grad.weights.clone();
        analytic.push(grad.bias);
        let mut numeric = Vec::with_capacity(d + 1);
        for j in 0..d {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[j] += h;
            down[j] -= h;
            numeric.push((loss_at(up, b) - loss_at(down, b)) / (2.0 * h));
        }
        numeric.push((loss_at(w.clone(), b + h) - loss_at(w.clone(), b - h)) / (2.0 * h));
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1.0);
        worst = worst.max(diff / norm);
    }
    ensure!(worst < 1e-4, "worst relative error {worst:.3e}");
    Ok(format!("100 instances, worst relative error {worst:.2e}"))
}

fn slope_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.gen_range(2..60);
        let mut xs: BTreeSet<usize> = BTreeSet::new();
        while xs.len() < len {
            xs.insert(rng.gen_range(0..100));
        }
        let series: Vec<(usize, f64)> = xs.into_iter().map(|x| (x, rng.gen_range(-1.0..1.0))).collect();
        let n = series.len() as f64;
        let sx: f64 = series.iter().map(|p| p.0 as f64).sum();
        let sy: f64 = series.iter().map(|p| p.1).sum();
        let sxx: f64 = series.iter().map(|p| (p.0 * p.0) as f64).sum();
        let sxy: f64 = series.iter().map(|p| p.0 as f64 * p.1).sum();
        let expected = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let fit = fit_slope(&series);
        ensure!(!fit.degenerate, "series with {len} distinct points flagged degenerate");
        worst = worst.max((fit.slope - expected).abs());
    }
    ensure!(worst < 1e-9, "worst deviation {worst:.3e}");
    Ok(format!("1000 series, worst deviation {worst:.2e}"))
}

fn score_identities() -> Outcome {
    let spec = SynthSpec {
        d: 200,
        n_per_slot: 100,
        n_slots: 12,
        stable_pos: 5,
        stable_neg: 5,
        n_drift_up: 10,
        n_drift_down: 10,
        base_p: 0.05,
        peak_p: 0.4,
        noise_p: 0.05,
        seed: 4,
        start_year: 2016,
        start_month: 1,
    };
    let (ds, _) = generate(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w: Vec<f64> = (0..spec.d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let b = rng.gen_range(-1.0..1.0);
    let model = LinearModel::new(w.clone(), b, ds.dictionary().fingerprint()).unwrap();
    let config = DriftConfig::default();
    let means = slot_means(&ds, &config).unwrap();
    let trend = score_trend(&model, &ds, &config, Label::Malware).unwrap();
    ensure!(trend.len() == spec.n_slots, "expected {} slots, got {}", spec.n_slots, trend.len());

    let mut worst_mean: f64 = 0.0;
    let mut mean_series = Vec::new();
    for point in &trend {
        let column = means.column(point.slot).ok_or(format!("slot {} empty", point.slot))?;
        let stats = point.stats.ok_or(format!("slot {} has no scores", point.slot))?;
        let predicted = w.iter().zip(column).map(|(wj, mj)| wj * mj).sum::<f64>() + b;
        worst_mean = worst_mean.max((stats.mean - predicted).abs());
        mean_series.push((point.slot, stats.mean));
    }
    let score_slope = fit_slope(&mean_series).slope;
    let slopes: Vec<f64> = (0..spec.d).map(|j| fit_slope(&means.row(j)).slope).collect();
    let decomposed: f64 = t_stability_vector(&w, &slopes).iter().sum();
    let slope_err = (score_slope - decomposed).abs();
    ensure!(worst_mean < 1e-9, "slot mean score off by {worst_mean:.3e}");
    ensure!(slope_err < 1e-6, "score slope {score_slope} vs sum of deltas {decomposed}");
    Ok(format!("mean-score error {worst_mean:.2e}, slope error {slope_err:.2e}"))
}

fn clipping_invariant() -> Outcome {
    let cmp = &reference().comparison;
    let mut parts = Vec::new();
    for id in ["cb_h", "cb_l"] {
        let run = cmp.run(id).ok_or(format!("missing {id}"))?;
        let r = run.bound.unwrap();
        ensure!(run.bounded.len() == 100, "{id}: {} bounded features", run.bounded.len());
        let max = run.bounded.iter().map(|&j| run.model.weights()[j].abs()).fold(0.0, f64::max);
        ensure!(max <= r + 1e-12, "{id}: max bounded |w| = {max} > {r}");
        parts.push(format!("r={r}: max |w| {max:.6}"));
    }
    Ok(parts.join(", "))
}

fn planted_recovery() -> Outcome {
    let reference = reference();
    let drift = &reference.comparison.drift;
    let truth = &reference.truth;
    let planted = truth.planted.len();
    ensure!(planted == 50, "reference plants {planted} features");
    let top = &drift.ranking()[..planted];
    let mut recovered = 0;
    for &j in top {
        let Some(feature) = truth.planted.get(&j) else { continue };
        recovered += 1;
        let record = &drift.records()[j];
        let ok = match feature.group {
            DriftGroup::Up => record.weight < 0.0 && record.slope > 0.0,
            DriftGroup::Down => record.weight > 0.0 && record.slope < 0.0,
        };
        ensure!(
            ok,
            "feature {j} ({:?}) recovered with w={} m={}",
            feature.group,
            record.weight,
            record.slope
        );
    }
    let share = recovered as f64 / planted as f64;
    ensure!(share >= 0.7, "recovered {recovered}/{planted}");
    Ok(format!("recovered {recovered}/{planted} ({:.0}%), all with matching signs", 100.0 * share))
}

fn decay_mitigation() -> Outcome {
    let cmp = &reference().comparison;
    let recall = |id: &str| {
        cmp.run(id)
            .and_then(|r| r.eval.decay.recall)
            .ok_or(format!("no recall decay slope for {id}"))
    };
    let (svm, high, low) = (recall("svm")?, recall("cb_h")?, recall("cb_l")?);
    let summary = format!("recall decay slopes svm {svm:.5}, cb_h {high:.5}, cb_l {low:.5}");
    ensure!(low > svm, "cb_l not above baseline: {summary}");
    ensure!((svm <= high && high <= low) || high == low, "cb_h not between: {summary}");
    Ok(summary)
}

/// ROC points from every distinct threshold, then trapezoids up to the cap.
fn enumerated_pauc(data: &[(f64, Label)], cap: f64) -> f64 {
    let pos = data.iter().filter(|p| p.1 == Label::Malware).count() as f64;
    let neg = data.len() as f64 - pos;
    let mut thresholds: Vec<f64> = data.iter().map(|p| p.0).collect();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let roc: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let tp = data.iter().filter(|p| p.0 >= t && p.1 == Label::Malware).count() as f64;
            let fp = data.iter().filter(|p| p.0 >= t && p.1 == Label::Goodware).count() as f64;
            (fp / neg, tp / pos)
        })
        .collect();
    let mut area = 0.0;
    for pair in roc.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        if x0 >= cap {
            break;
        }
        let (x_end, y_end) = if x1 > cap {
            (cap, y0 + (y1 - y0) * (cap - x0) / (x1 - x0))
        } else {
            (x1, y1)
        };
        area += (x_end - x0) * (y0 + y_end) / 2.0;
    }
    area / cap
}

fn pairwise_auc(data: &[(f64, Label)]) -> f64 {
    let pos: Vec<f64> = data.iter().filter(|p| p.1 == Label::Malware).map(|p| p.0).collect();
    let neg: Vec<f64> = data.iter().filter(|p| p.1 == Label::Goodware).map(|p| p.0).collect();
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn pauc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_full: f64 = 0.0;
    let mut instances = 0;
    while instances < 100 {
        let n = rng.gen_range(2..40);
        let levels = rng.gen_range(2..12) as f64;
        let data: Vec<(f64, Label)> = (0..n)
            .map(|_| {
                let label = if rng.gen_bool(0.5) { Label::Malware } else { Label::Goodware };
                ((rng.gen::<f64>() * levels).floor(), label)
            })
            .collect();
        if data.iter().all(|p| p.1 == data[0].1) {
            continue;
        }
        instances += 1;
        let got = partial_auc_scored(&data, 1.0).map_err(|e| e.to_string())?;
        worst_full = worst_full.max((got - pairwise_auc(&data)).abs());
    }
    ensure!(worst_full < 1e-9, "cap 1.0 deviates from pairwise AUC by {worst_full:.3e}");

    let mal = Label::Malware;
    let good = Label::Goodware;
    // one positive ranked above the single goodware sample allowed by the cap
    let mut first: Scored = vec![(3.0, mal), (2.5, good), (2.0, mal), (0.0, mal)];
    first.extend((0..19).map(|i| (-1.0 - i as f64, good)));
    let hand: Vec<(Scored, Option<f64>)> = vec![
        (first, Some(1.0 / 3.0)),
        ((0..40).map(|i| (i as f64, if i >= 20 { mal } else { good })).collect(), Some(1.0)),
        ((0..40).map(|i| (i as f64, if i < 20 { mal } else { good })).collect(), Some(0.0)),
        ((0..40).map(|i| (1.0, if i % 2 == 0 { mal } else { good })).collect(), Some(0.025)),
        (
            vec![(0.9, mal), (0.8, good), (0.7, mal), (0.6, good), (0.6, mal), (0.1, good)],
            None,
        ),
    ];
    let mut worst_hand: f64 = 0.0;
    for (data, literal) in &hand {
        let got = partial_auc_scored(data, 0.05).map_err(|e| e.to_string())?;
        let oracle = enumerated_pauc(data, 0.05);
        worst_hand = worst_hand.max((got - oracle).abs());
        if let Some(v) = literal {
            worst_hand = worst_hand.max((oracle - v).abs());
        }
    }
    ensure!(worst_hand < 1e-12, "cap 0.05 hand cases deviate by {worst_hand:.3e}");
    Ok(format!(
        "cap 1.0 worst {worst_full:.1e} over 100 instances, cap 0.05 worst {worst_hand:.1e} over {} hand cases",
        hand.len()
    ))
}

fn directory_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("reference.tsv");
    driftguard::io::save_dataset(&data, &reference().dataset, &[]).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_driftguard"))
            .args(["compare", "--seed", "7", "--no-provenance-timestamp", "--dataset"])
            .arg(&data)
            .arg("--out")
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        ensure!(status.success(), "compare run {run} exited with {status}");
        outputs.push(directory_bytes(&out));
    }
    ensure!(outputs[0].len() >= 10, "only {} report files", outputs[0].len());
    let differing: Vec<&str> = outputs[0]
        .iter()
        .zip(&outputs[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    ensure!(
        outputs[0].len() == outputs[1].len() && differing.is_empty(),
        "reports differ: {differing:?}"
    );
    Ok(format!("{} report files byte-identical across two runs", outputs[0].len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 Android unstable-feature deltas", Duration::from_secs(1), android_delta_rows),
        ("2 hinge gradient vs finite differences", Duration::from_secs(10), gradient_check),
        ("3 slope fit vs normal equations", Duration::from_secs(5), slope_oracle),
        ("4 score expectation identities", Duration::from_secs(10), score_identities),
        ("5 clipping invariant", Duration::from_secs(120), clipping_invariant),
        ("6 planted drift recovery", Duration::from_secs(300), planted_recovery),
        ("7 decay mitigation", Duration::from_secs(600), decay_mitigation),
        ("8 partial AUC oracle", Duration::from_secs(10), pauc_oracle),
        ("9 determinism", Duration::from_secs(600), determinism),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; took {elapsed:.1?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{elapsed:.2?}]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} [{elapsed:.2?}]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
