//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line.

use std::f64::consts::PI;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use caplab::activations::{Activation, SERIES_TOL};
use caplab::bounds::{self, BoundQuery};
use caplab::linalg::{frobenius_norm, spectral_norm_default, Matrix};
use caplab::networks::{conform_matrix, patch_overlap, DeepPowerNet, Network, PatchSet};
use caplab::rademacher::{estimate, sphere_points, EstimateOptions, HypothesisSpec, RademacherEstimate};
use caplab::rng;
use caplab::shattering::{
    augment_bias, conv_shatter_instance, frobenius_default_constants, frobenius_shatter_instance,
    spectral_shatter_instance, verify_shattering_with, FrobeniusOptions, NormKind, ShatterCertificate,
    SpectralOptions, VerifyOptions,
};

/// Timed criteria run one at a time so their runtimes are not inflated by
/// each other.
static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: u32, ok: bool, detail: String) {
    println!("criterion {id}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} failed: {detail}");
}

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Largest singular value by one-sided Jacobi rotations.
fn jacobi_top_singular_value(m: &Matrix) -> f64 {
    let (rows, cols) = (m.rows(), m.cols());
    // Work on columns of the taller orientation.
    let a: Vec<Vec<f64>> = if rows >= cols {
        (0..cols).map(|j| m.column(j)).collect()
    } else {
        (0..rows).map(|i| m.row(i).to_vec()).collect()
    };
    let mut a = a;
    let k = a.len();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..a[p].len() {
                    let (x, y) = (a[p][i], a[q][i]);
                    a[p][i] = c * x - s * y;
                    a[q][i] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    a.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max)
}

/// 200-term series `Σ exp(log |t_j|)`, summed smallest first.
fn log_space_sum(log_terms: impl Iterator<Item = f64>) -> f64 {
    let mut terms: Vec<f64> = log_terms.map(f64::exp).collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

fn ln_fact(h: usize) -> f64 {
    (2..=h).map(|i| (i as f64).ln()).sum()
}

fn erf_tilde_oracle(r: f64, z: f64) -> f64 {
    let lx = (r * z).ln();
    log_space_sum((0..200).map(|h| {
        let hf = h as f64;
        (2.0 / PI.sqrt()).ln() + (2.0 * hf + 1.0) * lx - ln_fact(h) - (2.0 * hf + 1.0).ln()
    }))
}

fn smoothed_tilde_oracle(r: f64, z: f64) -> f64 {
    0.5 * z
        + log_space_sum((0..200).map(|h| {
            let hf = h as f64;
            -0.5 * PI.ln() + (2.0 * hf + 1.0) * r.ln() + (2.0 * hf + 2.0) * z.ln()
                - ln_fact(h)
                - (2.0 * hf + 1.0).ln()
                - (2.0 * hf + 2.0).ln()
        }))
}

fn keep_all() -> VerifyOptions {
    VerifyOptions {
        keep_networks: true,
        ..VerifyOptions::default()
    }
}

fn oracle_max_conv_norm(cert: &ShatterCertificate) -> f64 {
    cert.records
        .iter()
        .map(|r| match r.network.as_ref().expect("networks kept") {
            Network::Conv(c) => jacobi_top_singular_value(&conform_matrix(&c.phi, &c.w).unwrap()),
            other => panic!("expected a conv net, got {other:?}"),
        })
        .fold(0.0, f64::max)
}

fn outputs_in(cert: &ShatterCertificate, levels: &[f64], tol: f64) -> bool {
    cert.records
        .iter()
        .all(|r| r.outputs.iter().all(|o| levels.iter().any(|l| (o - l).abs() <= tol)))
}

#[test]
fn criterion_01_conv_simple_case() {
    let _g = serial();
    let start = Instant::now();
    let inst = conv_shatter_instance(1.0, 1.0, 0.5, 4).unwrap();
    let cert = verify_shattering_with(&inst, &keep_all()).unwrap();
    let elapsed = start.elapsed();
    let oracle_norm = oracle_max_conv_norm(&cert);
    let ok = inst.m() == 2
        && inst.d() == 9
        && cert.passed
        && cert.labelings_checked == 4
        && outputs_in(&cert, &[0.0, 1.0], 1e-9)
        && cert.min_margin_seen >= 0.5
        && cert.max_norm_seen <= 1.0 + 1e-8
        && oracle_norm <= 1.0 + 1e-8
        && elapsed < Duration::from_secs(1);
    report(
        1,
        ok,
        format!(
            "m={} d={} labelings={} min margin={} max norm={} oracle norm={} time={elapsed:?}",
            inst.m(),
            inst.d(),
            cert.labelings_checked,
            cert.min_margin_seen,
            cert.max_norm_seen,
            oracle_norm
        ),
    );
}

#[test]
fn criterion_02_conv_general_case() {
    let _g = serial();
    let start = Instant::now();
    let inst = conv_shatter_instance(2.0, 1.0, 0.5, 4).unwrap();
    let cert = verify_shattering_with(&inst, &keep_all()).unwrap();
    let elapsed = start.elapsed();
    let oracle_norm = oracle_max_conv_norm(&cert);
    let ok = inst.m() == 8
        && cert.passed
        && cert.labelings_checked == 256
        && outputs_in(&cert, &[0.0, 1.0], 1e-9)
        && cert.max_norm_seen <= 2.0 + 1e-8
        && oracle_norm <= 2.0 + 1e-8
        && elapsed < Duration::from_secs(10);
    report(
        2,
        ok,
        format!(
            "m={} labelings={} max norm={} oracle norm={} time={elapsed:?}",
            inst.m(),
            cert.labelings_checked,
            cert.max_norm_seen,
            oracle_norm
        ),
    );
}

/// Seed of the dense orthogonal-points construction used below.
const SPECTRAL_SEED: u64 = 1;

#[test]
fn criterion_03_dense_spectral_construction() {
    let _g = serial();
    let start = Instant::now();
    let opts = SpectralOptions {
        seed: SPECTRAL_SEED,
        max_tries: 1000,
        max_points: Some(8),
        ..SpectralOptions::default()
    };
    let eps = 0.07;
    let inst = spectral_shatter_instance(1.0, 1.0, 1.0, 16, eps, &Activation::Relu, &opts).unwrap();
    let cert = verify_shattering_with(&inst, &keep_all()).unwrap();
    let elapsed = start.elapsed();
    let oracle_norm = cert
        .records
        .iter()
        .map(|r| match r.network.as_ref().unwrap() {
            Network::Dense(net) => jacobi_top_singular_value(&net.w),
            other => panic!("expected a dense net, got {other:?}"),
        })
        .fold(0.0, f64::max);
    let ok = inst.m() == 8
        && cert.passed
        && cert.labelings_checked == 256
        && cert.min_margin_seen >= eps
        && cert.max_norm_seen <= 1.0 + 1e-8
        && oracle_norm <= 1.0 + 1e-8
        && elapsed < Duration::from_secs(30);
    report(
        3,
        ok,
        format!(
            "eps={eps} seed={SPECTRAL_SEED} m={} labelings={} min margin={} max norm={} oracle norm={oracle_norm} time={elapsed:?}",
            inst.m(),
            cert.labelings_checked,
            cert.min_margin_seen,
            cert.max_norm_seen
        ),
    );
}

/// Seed of the sparse incoherent-points construction used below.
const FROBENIUS_SEED: u64 = 5;

#[test]
fn criterion_04_sparse_frobenius_construction_and_bias() {
    let _g = serial();
    let opts = FrobeniusOptions {
        constants: frobenius_default_constants(),
        seed: FROBENIUS_SEED,
        max_points: Some(6),
        ..FrobeniusOptions::default()
    };
    let (b, big_b, b_x) = (1.0, 1.0, 1.0);
    let inst = frobenius_shatter_instance(b, big_b, b_x, 8, 64, 0.02, &opts).unwrap();
    let cert = verify_shattering_with(&inst, &keep_all()).unwrap();
    let beta = inst.meta["beta"];

    let mut sampler = rng::seeded(404);
    let mut worst_gap = 0.0f64;
    let mut norm_ok = true;
    for rec in &cert.records {
        let net = match rec.network.as_ref().unwrap() {
            Network::Dense(net) => net,
            other => panic!("expected a dense net, got {other:?}"),
        };
        let aug = augment_bias(net, b_x).unwrap();
        let fro = frobenius_norm(&net.w);
        let fro_aug = frobenius_norm(&aug.net.w);
        norm_ok &= fro <= big_b && fro_aug <= fro + beta / b_x * (inst.n as f64).sqrt() + 1e-12;
        for _ in 0..100 {
            let radius = b_x * rng::uniform(&mut sampler);
            let x = rng::sphere_point(&mut sampler, inst.d(), radius);
            worst_gap = worst_gap.max((aug.forward(&x).unwrap() - net.forward(&x).unwrap()).abs());
        }
    }
    let ok = inst.m() == 6 && cert.passed && cert.labelings_checked == 64 && norm_ok && worst_gap <= 1e-12;
    report(
        4,
        ok,
        format!(
            "seed={FROBENIUS_SEED} m={} labelings={} max frobenius norm={} beta={beta} max bias-lift gap={worst_gap:e}",
            inst.m(),
            cert.labelings_checked,
            cert.max_norm_seen
        ),
    );
}

#[test]
fn criterion_05_series_envelope() {
    let erf = Activation::ErfScaled { r: 1.0 };
    let got = erf.tilde_sigma(1.0, SERIES_TOL).unwrap();
    let want = erf_tilde_oracle(1.0, 1.0);
    let cap = 2.0 / PI.sqrt() * 1f64.exp();
    let erf_ok = (got - want).abs() <= 1e-10 && got <= cap && erf.closed_form_tilde_cap(1.0).unwrap() == cap;

    let smooth = Activation::SmoothedRelu { r: 1.0 };
    let got_s = smooth.tilde_sigma(1.0, SERIES_TOL).unwrap();
    let want_s = smoothed_tilde_oracle(1.0, 1.0);
    let cap_s = 0.5 + 1.0 / PI.sqrt() * 1f64.exp();
    let smooth_ok = (got_s - want_s).abs() <= 1e-10 && got_s <= cap_s;
    report(
        5,
        erf_ok && smooth_ok,
        format!("erf: {got} vs oracle {want}, cap {cap}; smoothed: {got_s} vs oracle {want_s}, cap {cap_s}"),
    );
}

#[test]
fn criterion_06_deep_power_exactness() {
    let layer = || Matrix::from_rows(&[vec![1.5]]).unwrap();
    let net = DeepPowerNet::new(vec![layer(), layer()], vec![1.0], 2).unwrap();
    let out = net.forward(&[1.0]).unwrap();
    let q = BoundQuery {
        b: 1.0,
        big_b: 1.5,
        b_x: 1.0,
        k: 2,
        depth: 2,
        eps: 1.5f64.powi(6),
        ..BoundQuery::default()
    };
    let m = bounds::deep_power_bound(&q).unwrap().value;
    report(6, out == 11.390625 && m == 1.0, format!("forward={out} bound m={m}"));
}

fn run_estimate(points: &[Vec<f64>], spec: &HypothesisSpec, trials: usize, seed: u64) -> RademacherEstimate {
    let opts = EstimateOptions {
        trials,
        restarts: 8,
        seed,
        ..EstimateOptions::default()
    };
    estimate(points, spec, &opts).unwrap()
}

#[test]
fn criterion_07_linear_class_ceiling() {
    let _g = serial();
    let start = Instant::now();
    let spec = HypothesisSpec::dense(Activation::Identity, 1.0, 1.0, NormKind::Spectral, 4);
    let mut ok = true;
    let mut detail = Vec::new();
    for (i, m) in [8usize, 32, 128].into_iter().enumerate() {
        let points = sphere_points(m, 16, 1.0, 70 + i as u64);
        let est = run_estimate(&points, &spec, 400, 7);
        let ceiling = 1.0 / (m as f64).sqrt() + 3.0 * est.stderr;
        ok &= est.mean <= ceiling;
        detail.push(format!("m={m}: {:.5}±{:.5} vs {:.5}", est.mean, est.stderr, ceiling));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(120);
    report(7, ok, format!("{}; time={elapsed:?}", detail.join(", ")));
}

#[test]
fn criterion_08_square_activation_ceiling() {
    let _g = serial();
    let sigma = Activation::Polynomial { coeffs: vec![0.0, 1.0] };
    let tilde = sigma.tilde_sigma(1.0, SERIES_TOL).unwrap();
    let spec = HypothesisSpec::dense(sigma, 1.0, 1.0, NormKind::Spectral, 4);
    let points = sphere_points(32, 8, 1.0, 80);
    let est = run_estimate(&points, &spec, 200, 8);
    let ceiling = tilde / 32f64.sqrt() + 3.0 * est.stderr;
    report(
        8,
        tilde == 1.0 && est.mean <= ceiling,
        format!("mean={:.5}±{:.5} ceiling={ceiling:.5}", est.mean, est.stderr),
    );
}

#[test]
fn criterion_09_width_growth() {
    let _g = serial();
    let points = sphere_points(16, 256, 1.0, 90);
    let ests: Vec<(usize, RademacherEstimate)> = [1usize, 4, 16]
        .into_iter()
        .map(|n| {
            let spec = HypothesisSpec::dense(Activation::Relu, 1.0, 1.0, NormKind::Spectral, n);
            (n, run_estimate(&points, &spec, 100, 9))
        })
        .collect();
    let monotone = ests
        .windows(2)
        .all(|w| w[1].1.mean + 2.0 * w[1].1.stderr.max(w[0].1.stderr) >= w[0].1.mean);
    let growth = ests[2].1.mean >= 1.5 * ests[0].1.mean;
    let detail: Vec<String> = ests
        .iter()
        .map(|(n, e)| format!("n={n}: {:.5}±{:.5}", e.mean, e.stderr))
        .collect();
    report(9, monotone && growth, detail.join(", "));
}

#[test]
fn criterion_10_patch_overlap() {
    let disjoint = PatchSet::strided_1d(8, 2, 2).unwrap();
    let strided = PatchSet::strided_1d(10, 4, 2).unwrap();
    let full = PatchSet::new(4, vec![vec![0, 1, 2, 3]; 5]).unwrap();
    let overlaps = [patch_overlap(&disjoint), patch_overlap(&strided), patch_overlap(&full)];
    let mut ok = overlaps == [1, 2, full.n()];
    let mut detail = vec![format!("overlaps={overlaps:?}")];
    for (o, (b, big_b, b_x, lip, eps)) in overlaps
        .iter()
        .flat_map(|&o| [(1.0, 1.0, 1.0, 1.0, 0.5), (2.0, 1.5, 1.0, 1.0, 0.25), (1.0, 1.0, 3.0, 0.5, 0.1)].map(|p| (o, p)))
    {
        let q = BoundQuery {
            b,
            big_b,
            b_x,
            lip,
            eps,
            o_phi: o,
            ..BoundQuery::default()
        };
        let got = bounds::conv_linear_bound(&q).unwrap().value;
        let want = (2.0 * o as f64 * (b * big_b * b_x * lip / eps).powi(2)).round();
        ok &= got == want;
        detail.push(format!("O={o} eps={eps}: {got}"));
    }
    report(10, ok, detail.join(", "));
}

/// Last integer in `1..=limit` violating `m ≥ rhs(m)`, plus one.
fn scan(rhs: impl Fn(f64) -> f64, limit: u64) -> u64 {
    (1..=limit).filter(|&m| (m as f64) < rhs(m as f64)).last().map_or(1, |m| m + 1)
}

#[test]
fn criterion_11_fixed_point_minimality() {
    const LIMIT: u64 = 1_000_000;
    let sets = [
        (1.0, 1.0, 1.0, 1.0, 1.0, 4usize),
        (1.0, 1.0, 1.0, 1.0, 0.5, 16),
        (2.0, 1.0, 0.5, 1.0, 0.8, 2),
        (1.0, 0.5, 1.0, 2.0, 0.4, 64),
        (1.0, 1.0, 1.0, 1.0, 0.3, 1),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (b, big_b, b_x, lip, eps, n) in sets {
        let q = BoundQuery {
            b,
            big_b,
            b_x,
            lip,
            eps,
            n,
            ..BoundQuery::default()
        };
        let fro = bounds::frobenius_bound(&q).unwrap().value as u64;
        let k_fro = (b * big_b * b_x * lip / eps).powi(2);
        let fro_rhs = |m: f64| bounds::frobenius_rhs(k_fro, m);
        let pool = bounds::conv_pool_bound(&q).unwrap().value as u64;
        let k_pool = (lip * big_b * b_x / eps).powi(2);
        let pool_rhs = |m: f64| bounds::conv_pool_rhs(k_pool, n, m);
        for (name, got, rhs) in [("frobenius", fro, &fro_rhs as &dyn Fn(f64) -> f64), ("conv-pool", pool, &pool_rhs)] {
            let satisfies = got as f64 >= rhs(got as f64);
            let previous_violates = got == 1 || ((got - 1) as f64) < rhs((got - 1) as f64);
            let scanned = scan(rhs, LIMIT);
            ok &= got < LIMIT && satisfies && previous_violates && scanned == got;
            detail.push(format!("{name}(eps={eps}, n={n})={got} scan={scanned}"));
        }
    }
    report(11, ok, detail.join(", "));
}

#[test]
fn criterion_12_norm_inequalities() {
    let mut ok = true;
    let mut worst_oracle_gap = 0.0f64;
    let mut failures = Vec::new();
    for i in 0..1000u64 {
        let mut r = rng::stream(1212, i);
        let rows = 1 + (rng::uniform(&mut r) * 12.0) as usize;
        let cols = 1 + (rng::uniform(&mut r) * 12.0) as usize;
        let m = Matrix::from_fn(rows, cols, |_, _| rng::gaussian(&mut r));
        let spec = spectral_norm_default(&m).unwrap();
        let fro = frobenius_norm(&m);
        let oracle = jacobi_top_singular_value(&m);
        let gap = (spec - oracle).abs();
        worst_oracle_gap = worst_oracle_gap.max(gap);
        let this_ok = spec <= fro && fro <= spec * (rows.min(cols) as f64).sqrt() && gap <= 1e-8;
        if !this_ok {
            failures.push(format!("#{i} {rows}x{cols}: spectral={spec} frobenius={fro} oracle={oracle}"));
        }
        ok &= this_ok;
    }
    report(
        12,
        ok,
        format!("1000 matrices, worst oracle gap={worst_oracle_gap:e}, failures={failures:?}"),
    );
}
