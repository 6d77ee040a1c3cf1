//! Random fixtures and independent reference implementations for the
//! integration tests. The references in this file never call into the
//! chart code; `invariants` does.

#![allow(dead_code)]

pub mod invariants;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survchart::dataset::{Dataset, PatientRecord};
use survchart::riskadjust::{Baseline, ManualModel, StepFunction};

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cumulative step hazard with `k` random jumps on `(0, span]`.
pub fn random_step(rng: &mut TestRng, k: usize, span: f64) -> StepFunction {
    let mut times: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..span)).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut acc = 0.0;
    let values = times
        .iter()
        .map(|_| {
            acc += rng.random_range(0.001..0.2);
            acc
        })
        .collect();
    StepFunction::new(times, values).unwrap()
}

/// A model with one covariate `z` and the given baseline.
pub fn z_model(rng: &mut TestRng, baseline: Baseline) -> (ManualModel, f64) {
    let b = rng.random_range(-1.0..1.0);
    (ManualModel::new([("z", b)]).with_baseline(baseline), b)
}

/// A unit of `n` patients with one covariate `z`. Entry times are coarse so
/// that ties occur.
pub fn random_unit(rng: &mut TestRng, n: usize) -> Dataset {
    let recs = (0..n)
        .map(|_| {
            let entry = (rng.random_range(0.0..40.0_f64) * 2.0).round() / 2.0;
            let surv = rng.random_range(0.0..30.0_f64);
            let mut r = PatientRecord::new(entry, surv, rng.random_bool(0.6));
            r.covariates = vec![rng.random_range(-1.0..1.0)];
            r
        })
        .collect();
    Dataset::new(vec!["z".into()], recs).unwrap()
}

/// Value of a right-continuous cumulative step function.
pub fn step_value(times: &[f64], values: &[f64], x: f64) -> f64 {
    let mut v = 0.0;
    for (t, y) in times.iter().zip(values) {
        if *t <= x {
            v = *y;
        }
    }
    v
}

pub fn baseline_value(b: &Baseline, x: f64) -> f64 {
    match b {
        Baseline::Rate { rate } => rate * x.max(0.0),
        Baseline::Table(s) => step_value(s.times(), s.values(), x),
    }
}

/// Reference subject quantities at chronological time `t`.
pub struct Subject {
    pub entry: f64,
    pub surv: f64,
    pub event: bool,
    pub rr: f64,
}

impl Subject {
    pub fn lambda(&self, base: &Baseline, t: f64, c: Option<f64>) -> f64 {
        if t < self.entry {
            return 0.0;
        }
        let window = match c {
            Some(c) if c < self.surv => c,
            _ => self.surv,
        };
        let u = if t - self.entry < window { t - self.entry } else { window };
        self.rr * baseline_value(base, u)
    }

    pub fn failed_by(&self, t: f64, c: Option<f64>) -> bool {
        self.event && c.is_none_or(|c| self.surv <= c) && self.entry + self.surv <= t
    }
}

/// Subjects in stable entry order with `rr = exp(b z)`.
pub fn subjects(data: &Dataset, b: f64) -> Vec<Subject> {
    let mut v: Vec<(usize, Subject)> = data
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            (
                i,
                Subject {
                    entry: r.entrytime,
                    surv: r.survtime,
                    event: r.event,
                    rr: (b * r.covariates[0]).exp(),
                },
            )
        })
        .collect();
    v.sort_by(|a, b| a.1.entry.total_cmp(&b.1.entry).then(a.0.cmp(&b.0)));
    v.into_iter().map(|x| x.1).collect()
}

/// `max_s {θ(N(t) − N(s)) − (e^θ − 1)(Λ(t) − Λ(s))}` over the origin and all
/// failure times `s ≤ t`; `min` for `θ < 0`.
pub fn bk_brute(subs: &[Subject], base: &Baseline, theta: f64, c: Option<f64>, t: f64) -> f64 {
    let n = |s: f64| subs.iter().filter(|x| x.failed_by(s, c)).count() as f64;
    let lam = |s: f64| subs.iter().map(|x| x.lambda(base, s, c)).sum::<f64>();
    let stat = |s: f64| theta * (n(t) - n(s)) - (theta.exp() - 1.0) * (lam(t) - lam(s));
    // change at the very start: nothing observed or accumulated before it
    let mut best = theta * n(t) - (theta.exp() - 1.0) * lam(t);
    for x in subs {
        if x.failed_by(t, c) {
            let v = stat(x.entry + x.surv);
            best = if theta > 0.0 { best.max(v) } else { best.min(v) };
        }
    }
    best = if theta > 0.0 { best.max(0.0) } else { best.min(0.0) };
    best
}

pub fn mle(n: f64, l: f64, maxtheta: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    if l == 0.0 {
        return maxtheta.ln();
    }
    let raw = (n / l).ln();
    if raw < 0.0 {
        0.0
    } else if raw > maxtheta.ln() {
        maxtheta.ln()
    } else {
        raw
    }
}

/// Explicit maximum over every change subject `ν`, recomputing the suffix
/// totals from scratch. Returns `(value, θ̂ at the smallest maximizing ν)`.
pub fn cgr_brute(subs: &[Subject], base: &Baseline, maxtheta: f64, c: Option<f64>, t: f64) -> (f64, f64) {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for nu in 0..subs.len() {
        if subs[nu].entry > t {
            continue;
        }
        let tail = &subs[nu..];
        let n = tail.iter().filter(|x| x.failed_by(t, c)).count() as f64;
        let l: f64 = tail.iter().map(|x| x.lambda(base, t, c)).sum();
        let th = mle(n, l, maxtheta);
        let term = th * n - (th.exp() - 1.0) * l;
        if term > best.0 + 1e-13 {
            best = (term, th);
        }
    }
    (best.0.max(0.0), best.1)
}

/// Breslow log partial likelihood from first principles, with compensated sums.
pub fn cox_loglik(data: &Dataset, cols: &[usize], beta: &[f64]) -> f64 {
    let recs = data.records();
    let eta: Vec<f64> = recs
        .iter()
        .map(|r| cols.iter().zip(beta).map(|(&c, b)| r.covariates[c] * b).sum())
        .collect();
    let mut idx: Vec<usize> = (0..recs.len()).collect();
    idx.sort_by(|&a, &b| recs[a].survtime.total_cmp(&recs[b].survtime));
    // risk-set sums from the longest follow-up down
    let mut ll = Kahan::default();
    let mut risk = Kahan::default();
    let mut k = idx.len();
    while k > 0 {
        let t = recs[idx[k - 1]].survtime;
        let mut j = k;
        let mut ev = Kahan::default();
        let mut d = 0.0;
        while j > 0 && recs[idx[j - 1]].survtime == t {
            let i = idx[j - 1];
            risk.add(eta[i].exp());
            if recs[i].event {
                ev.add(eta[i]);
                d += 1.0;
            }
            j -= 1;
        }
        if d > 0.0 {
            ll.add(ev.sum);
            ll.add(-d * risk.sum.ln());
        }
        k = j;
    }
    ll.sum
}

#[derive(Default)]
pub struct Kahan {
    pub sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Five-point central difference.
pub fn derivative(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}
