//! Acceptance checks, one line of output per criterion.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_apfloat::ieee::Half;
use rustc_apfloat::Float;

use halfpf::bench::accuracy_metrics;
use halfpf::filter::stages::{self, KernelPlan};
use halfpf::filter::{
    run, run_observed, ParticleSet, RunConfig, RunConstants, Snapshot, Stage, StageEvent,
};
use halfpf::io::trajectory_csv;
use halfpf::model::{generate_video, Frame, LikelihoodForm, ModelParams, Video};
use halfpf::{Binary16, HalfKernel, Lane, OpCounters, PackedPair, PrecisionMode};

/// Mean Euclidean error of the f64 filter on the verification video,
/// recorded from the first calibration run. FP16 modes may be at most
/// twice this.
const FP64_MEAN_ERR: f64 = 2.117_826_335_360_701;
const FP64_MEAN_ERR_TOL: f64 = 1e-9;

const K: usize = 128;
const SEED: u64 = 42;

fn verification_video() -> Video {
    generate_video(&ModelParams::default(), 100, 128, 128, (64.0, 64.0), SEED).unwrap()
}

fn config(mode: PrecisionMode) -> RunConfig {
    RunConfig::new(K, mode, SEED, (64.0, 64.0))
}

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 7] = [
        ("binary16 conformance", c1_binary16),
        ("accuracy parity", c2_accuracy),
        ("stability", c3_stability),
        ("resampling correctness", c4_resampling),
        ("packed equivalence and optimization", c5_packed),
        ("determinism across workers", c6_determinism),
        ("normalization invariants", c7_normalization),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in checks.iter().enumerate() {
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {} {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {} {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn c1_binary16() -> Result<String, String> {
    for bits in 0..=u16::MAX {
        let h = Binary16::from_bits(bits);
        let back = Binary16::from_f64(h.to_f64());
        if h.is_nan() {
            ensure(back.is_nan(), || format!("NaN 0x{bits:04x} lost"))?;
        } else {
            ensure(back.to_bits() == bits, || {
                format!("0x{bits:04x} -> 0x{:04x}", back.to_bits())
            })?;
        }
    }

    let same = |ours: Binary16, theirs: Half| {
        if theirs.is_nan() {
            ours.is_nan()
        } else {
            u128::from(ours.to_bits()) == theirs.to_bits()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let n = 1_000_000;
    for _ in 0..n {
        let (a, b): (u16, u16) = (rng.random(), rng.random());
        let (x, y) = (Binary16::from_bits(a), Binary16::from_bits(b));
        let (ox, oy) = (Half::from_bits(a.into()), Half::from_bits(b.into()));
        ensure(same(x + y, (ox + oy).value), || {
            format!("0x{a:04x} + 0x{b:04x}")
        })?;
        ensure(same(x * y, (ox * oy).value), || {
            format!("0x{a:04x} * 0x{b:04x}")
        })?;
    }

    let max = Binary16::from_f64(65504.0);
    ensure(max == Binary16::MAX && max.is_finite(), || {
        "65504 not finite".into()
    })?;
    ensure(Binary16::from_f64(65519.99).to_bits() == 0x7BFF, || {
        "65519.99 rounded up".into()
    })?;
    ensure(Binary16::from_f64(65520.0).is_infinite(), || {
        "65520 did not overflow".into()
    })?;
    ensure(
        Binary16::from_f64(-65520.0) == Binary16::NEG_INFINITY,
        || "-65520".into(),
    )?;
    ensure((max + Binary16::from_f64(16.0)).is_infinite(), || {
        "65504 + 16 finite".into()
    })?;
    Ok(format!(
        "65536 round trips, {n} add/mul pairs bit-equal to soft float"
    ))
}

fn rounded(traj: &[(f64, f64)]) -> Vec<(i64, i64)> {
    traj.iter()
        .map(|p| (p.0.round() as i64, p.1.round() as i64))
        .collect()
}

fn c2_accuracy() -> Result<String, String> {
    let v = verification_video();
    let f64_run = run(&v, &config(PrecisionMode::Fp64)).map_err(|e| e.to_string())?;
    let f32_run = run(&v, &config(PrecisionMode::Fp32)).map_err(|e| e.to_string())?;
    let (_, base, _) = accuracy_metrics(&f64_run.trajectory, &v.truth).unwrap();
    ensure((base - FP64_MEAN_ERR).abs() <= FP64_MEAN_ERR_TOL, || {
        format!("f64 mean error {base} drifted from the calibrated {FP64_MEAN_ERR}")
    })?;
    let a = rounded(&f64_run.trajectory);
    let b = rounded(&f32_run.trajectory);
    let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count();
    ensure(differing == 0, || {
        format!("{differing} frames differ between f32 and f64")
    })?;

    let mut detail = format!("f32 == f64 on 100 frames, f64 mean {base:.4}");
    for mode in [PrecisionMode::Fp16Scalar, PrecisionMode::Fp16Packed] {
        let out = run(&v, &config(mode)).map_err(|e| e.to_string())?;
        let (_, mean, _) = accuracy_metrics(&out.trajectory, &v.truth).unwrap();
        ensure(mean <= 2.0 * FP64_MEAN_ERR, || {
            format!("{mode} mean error {mean} exceeds {}", 2.0 * FP64_MEAN_ERR)
        })?;
        detail.push_str(&format!(", {mode} {mean:.4}"));
    }
    Ok(detail)
}

fn c3_stability() -> Result<String, String> {
    let params = ModelParams::default();
    let frame = Frame::filled(64, 64, 255);
    let k = 64;
    let mut c = OpCounters::new();
    let consts = RunConstants::<Binary16>::new(&params, k, KernelPlan::HalfOptimized, &mut c);
    ensure(consts.template.len() == 69, || {
        format!("template has {} pixels", consts.template.len())
    })?;
    let mut set = ParticleSet::<Binary16>::new(k, (0.0, 0.0), &mut c).unwrap();
    let xs: Vec<f64> = (0..k).map(|i| i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 63.0 - x).collect();
    set.set_positions(&xs, &ys, &mut c);

    stages::compute_likelihoods(&mut set, &frame, &consts, LikelihoodForm::Direct, &mut c);
    let direct = set.snapshot().loglik;
    ensure(direct.iter().all(|l| *l == f64::INFINITY), || {
        "direct form stayed finite".into()
    })?;
    stages::compute_likelihoods(
        &mut set,
        &frame,
        &consts,
        LikelihoodForm::Stabilized,
        &mut c,
    );
    let stable = set.snapshot().loglik;
    ensure(stable.iter().all(|l| l.is_finite()), || {
        "stabilized form overflowed".into()
    })?;

    // Weights stay finite in every mode, on the verification video and on
    // a video that alternates saturated and random frames.
    let v = verification_video();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let stress: Vec<Frame> = (0..20)
        .map(|i| match i % 3 {
            0 => Frame::filled(128, 128, 255),
            1 => Frame::filled(128, 128, 0),
            _ => Frame::new(128, 128, (0..128 * 128).map(|_| rng.random()).collect()).unwrap(),
        })
        .collect();
    let stress = Video::new(stress, Vec::new()).unwrap();
    let mut events = 0usize;
    for video in [&v, &stress] {
        for mode in PrecisionMode::ALL {
            let bad = Arc::new(Mutex::new(None));
            let sink = bad.clone();
            let mut obs = move |e: &StageEvent| {
                if e.stage == Stage::Weight && e.snapshot.weights.contains(&f64::INFINITY) {
                    sink.lock().unwrap().get_or_insert(e.frame);
                }
            };
            run_observed(video, &config(mode), &mut obs).map_err(|e| format!("{mode}: {e}"))?;
            if let Some(f) = *bad.lock().unwrap() {
                return Err(format!("{mode}: +inf weight at frame {f}"));
            }
            events += video.len();
        }
    }
    let peak = stable.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    Ok(format!(
        "direct +inf, stabilized max {peak}, no +inf weight in {events} weight updates"
    ))
}

/// First index whose cdf reaches `p`, or the last index.
fn brute_force(cdf: &[f64], p: f64) -> usize {
    cdf.iter().position(|&c| c >= p).unwrap_or(cdf.len() - 1)
}

fn weight_grid(k: usize, levels: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|v| {
                levels.iter().map(move |&l| {
                    let mut w = v.clone();
                    w.push(l);
                    w
                })
            })
            .collect();
    }
    out.retain(|w| w.iter().any(|&x| x > 0.0));
    out
}

fn resample_check<P: Lane>(
    w: &[f64],
    us: &[f64],
    plan: KernelPlan,
    point: impl Fn(usize, usize, f64) -> f64,
    offspring: &mut [f64],
) -> Result<(), String> {
    let k = w.len();
    let mut c = OpCounters::new();
    let consts = RunConstants::<P>::new(&ModelParams::default(), k, plan, &mut c);
    let mut s = ParticleSet::<P>::new(k, (0.0, 0.0), &mut c).unwrap();
    s.set_weights(w, &mut c);
    let total = <P::Scalar as Lane>::narrow(w.iter().sum(), &mut c);
    stages::normalize_and_scan(&mut s, total, plan, &mut c).map_err(|e| e.to_string())?;
    let cdf = s.snapshot().cdf;
    offspring.iter_mut().for_each(|o| *o = 0.0);
    for &u in us {
        stages::systematic_resample(&mut s, u, &consts, &mut c);
        for (i, &a) in s.ancestors.iter().enumerate() {
            let want = brute_force(&cdf, point(i, k, u));
            if a != want {
                return Err(format!(
                    "w={w:?} u={u}: particle {i} got {a}, oracle {want}"
                ));
            }
        }
        if s.ancestors.windows(2).any(|x| x[0] > x[1]) {
            return Err(format!("w={w:?} u={u}: ancestors not monotone"));
        }
        for &a in &s.ancestors {
            offspring[a] += 1.0;
        }
    }
    Ok(())
}

fn c4_resampling() -> Result<String, String> {
    let n_u = 10_000;
    let us: Vec<f64> = (0..n_u).map(|i| (i as f64 + 0.5) / n_u as f64).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut vectors = 0usize;
    let mut worst_gap = 0.0f64;
    let mut worst_multinomial = 0.0f64;

    pool.install(|| -> Result<(), String> {
        let mut offspring = [0.0; 8];
        for k in 2..=8 {
            for w in weight_grid(k, &[0.0, 1.0, 2.0]) {
                vectors += 1;
                let off = &mut offspring[..k];
                resample_check::<f64>(
                    &w,
                    &us,
                    KernelPlan::Wide64,
                    |i, k, u| (i as f64 + u) / k as f64,
                    off,
                )?;
                let total: f64 = w.iter().sum();
                for (j, o) in off.iter().enumerate() {
                    let expect = k as f64 * w[j] / total;
                    worst_gap = worst_gap.max((o / n_u as f64 - expect).abs());
                }
                // Multinomial oracle: K independent categorical draws.
                if vectors.is_multiple_of(50) {
                    let trials = 2000;
                    let mut counts = vec![0.0; k];
                    for _ in 0..trials * k {
                        let r = rng.random::<f64>() * total;
                        let mut acc = 0.0;
                        let j = w
                            .iter()
                            .position(|&x| {
                                acc += x;
                                r < acc
                            })
                            .unwrap_or(k - 1);
                        counts[j] += 1.0;
                    }
                    for j in 0..k {
                        let multinomial = counts[j] / trials as f64;
                        worst_multinomial =
                            worst_multinomial.max((off[j] / n_u as f64 - multinomial).abs());
                    }
                }
            }
        }
        // binary16: sample points are computed in binary16 as k/K + u/K.
        let half_point = |i: usize, k: usize, u: f64| {
            let g = Binary16::from_f64(i as f64 / k as f64);
            let b = Binary16::from_f64(u) * Binary16::from_f64(1.0 / k as f64);
            (g + b).to_f64()
        };
        for k in [2, 4, 6, 8] {
            for w in weight_grid(k, &[0.0, 1.0]) {
                let off = &mut offspring[..k];
                resample_check::<Binary16>(&w, &us, KernelPlan::HalfNaive, half_point, off)?;
                resample_check::<PackedPair>(&w, &us, KernelPlan::HalfOptimized, half_point, off)?;
            }
        }
        Ok(())
    })?;
    ensure(worst_gap <= 1.0, || {
        format!("mean offspring off by {worst_gap}")
    })?;
    ensure(worst_multinomial <= 1.0, || {
        format!("multinomial gap {worst_multinomial}")
    })?;
    Ok(format!(
        "{vectors} weight vectors x {n_u} u match the oracle; offspring gap {worst_gap:.2e}, \
         multinomial gap {worst_multinomial:.3}"
    ))
}

fn collect(v: &Video, cfg: &RunConfig) -> Result<Vec<(usize, Stage, Snapshot)>, String> {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let sink = seen.clone();
    let mut obs = move |e: &StageEvent| {
        sink.lock()
            .unwrap()
            .push((e.frame, e.stage, e.snapshot.clone()))
    };
    run_observed(v, cfg, &mut obs).map_err(|e| e.to_string())?;
    let out = std::mem::take(&mut *seen.lock().unwrap());
    Ok(out)
}

fn c5_packed() -> Result<String, String> {
    let v = verification_video();
    let scalar_cfg = config(PrecisionMode::Fp16Scalar);
    let packed_cfg = config(PrecisionMode::Fp16Packed);
    let a = collect(&v, &scalar_cfg)?;
    let b = collect(&v, &packed_cfg)?;
    ensure(a.len() == b.len() && a.len() == 100 * 6 - 1, || {
        "stage counts differ".into()
    })?;
    for ((f, st, x), (_, _, y)) in a.iter().zip(&b) {
        ensure(x.bit_eq(y), || {
            format!("frame {f} differs after {}", st.name())
        })?;
    }

    let naive = run(&v, &scalar_cfg).map_err(|e| e.to_string())?.counters;
    let opt = run(&v, &packed_cfg).map_err(|e| e.to_string())?.counters;
    ensure(opt.half_arith_count * 2 <= naive.half_arith_count, || {
        format!(
            "half_arith {} vs naive {}",
            opt.half_arith_count, naive.half_arith_count
        )
    })?;
    let per = |c: &OpCounters| c.conversions() as f64 / (K * v.len()) as f64;
    ensure(per(&opt) < per(&naive), || {
        format!(
            "conversions per particle-frame {} vs {}",
            per(&opt),
            per(&naive)
        )
    })?;

    // Same kernel variant on both layouts: still bit-equal.
    let mut s = scalar_cfg.clone();
    s.half_kernel = Some(HalfKernel::Optimized);
    let ts = run(&v, &s).map_err(|e| e.to_string())?.trajectory;
    let tp = run(&v, &packed_cfg).map_err(|e| e.to_string())?.trajectory;
    ensure(ts == tp, || {
        "optimized scalar and packed trajectories differ".into()
    })?;

    Ok(format!(
        "{} stage snapshots bit-equal; half_arith {} vs {} ({:.3}x); conversions/particle-frame {:.2} vs {:.2}",
        a.len(),
        opt.half_arith_count,
        naive.half_arith_count,
        opt.half_arith_count as f64 / naive.half_arith_count as f64,
        per(&opt),
        per(&naive)
    ))
}

fn c6_determinism() -> Result<String, String> {
    let v = verification_video();
    for mode in PrecisionMode::ALL {
        let mut cfg = config(mode);
        let mut first: Option<String> = None;
        for workers in [1, 2, 4, 8] {
            cfg.workers = workers;
            let csv = trajectory_csv(&run(&v, &cfg).map_err(|e| e.to_string())?.trajectory);
            match &first {
                None => first = Some(csv),
                Some(f) => ensure(*f == csv, || format!("{mode}: workers {workers} differs"))?,
            }
        }
    }
    Ok("trajectory CSVs byte-identical for 1, 2, 4 and 8 workers in all modes".into())
}

fn c7_normalization() -> Result<String, String> {
    let v = verification_video();
    let mut detail = Vec::new();
    for mode in PrecisionMode::ALL {
        let tol = match mode {
            PrecisionMode::Fp64 => 1e-12,
            PrecisionMode::Fp32 => 1e-6,
            _ => 2f64.powi(-10),
        } * K as f64;
        let worst = Arc::new(Mutex::new((0.0f64, 0.0f64, None::<String>)));
        let sink = worst.clone();
        let mut obs = move |e: &StageEvent| {
            if e.stage != Stage::Normalize {
                return;
            }
            let s = &e.snapshot;
            let sum: f64 = s.weights.iter().sum();
            let last = *s.cdf.last().unwrap();
            let mut g = sink.lock().unwrap();
            g.0 = g.0.max((sum - 1.0).abs());
            g.1 = g.1.max((last - 1.0).abs());
            if s.cdf.windows(2).any(|x| x[0] > x[1]) {
                g.2.get_or_insert(format!("cdf decreases at frame {}", e.frame));
            }
        };
        run_observed(&v, &config(mode), &mut obs).map_err(|e| format!("{mode}: {e}"))?;
        let (sum_gap, last_gap, err) = std::mem::take(&mut *worst.lock().unwrap());
        if let Some(e) = err {
            return Err(format!("{mode}: {e}"));
        }
        ensure(sum_gap <= tol, || {
            format!("{mode}: |sum - 1| = {sum_gap} > {tol}")
        })?;
        ensure(last_gap <= tol, || {
            format!("{mode}: |cdf[K-1] - 1| = {last_gap} > {tol}")
        })?;
        detail.push(format!("{mode} {sum_gap:.1e}/{last_gap:.1e}"));
    }
    Ok(format!("worst |sum-1| / |cdf-1|: {}", detail.join(", ")))
}
