//! Property checks shared by the proptest suite and the acceptance runner.
//! Each returns `Err` with a description of the first violation.

use survchart::bk::{bk_cusum, BkSpec};
use survchart::cgr::{cgr_cusum, CgrMethod, CgrSpec};
use survchart::chart::Chart;
use survchart::controllimit::{control_limit, LimitChart, RunOptions, SimConfig, SimInputs};
use survchart::dataset::Dataset;
use survchart::funnel::{funnel_summary, Classification, FunnelOptions};
use survchart::riskadjust::{fit_coxph, Baseline, ManualModel, RiskModel};

pub type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn bk_sign(data: &Dataset, model: &ManualModel, theta: f64) -> Check {
    let c = bk_cusum(data, model, &BkSpec::new(theta), None).map_err(|e| e.to_string())?;
    let bad = c.points.iter().find(|p| if theta > 0.0 { p.value < 0.0 } else { p.value > 0.0 });
    ensure(bad.is_none(), || format!("BK value {:?} has the wrong sign for theta {theta}", bad))
}

pub fn cgr_bounds(data: &Dataset, model: &ManualModel, maxtheta: f64) -> Check {
    let spec = CgrSpec {
        maxtheta,
        ..CgrSpec::default()
    };
    let c = cgr_cusum(data, model, &spec, None).map_err(|e| e.to_string())?;
    for p in &c.points {
        let th = p.theta_hat.ok_or("missing theta_hat")?;
        ensure(p.value >= 0.0, || format!("negative CGR {}", p.value))?;
        ensure((0.0..=maxtheta.ln()).contains(&th), || format!("theta_hat {th} outside [0, ln {maxtheta}]"))?;
    }
    Ok(())
}

pub fn breslow_monotone(data: &Dataset) -> Check {
    let Ok(m) = fit_coxph(data, &["z"]) else {
        return Ok(());
    };
    let Baseline::Table(h) = &m.baseline else {
        return Err("fitted baseline is not a table".into());
    };
    ensure(h.values().first().is_none_or(|&v| v > 0.0), || "first jump not positive".into())?;
    ensure(h.values().windows(2).all(|w| w[1] > w[0]), || "baseline hazard not increasing".into())?;
    ensure(h.times().windows(2).all(|w| w[1] > w[0]), || "jump times not increasing".into())
}

/// Extra evaluation times leave values at the original times untouched.
pub fn bk_grid_refinement(data: &Dataset, model: &ManualModel, theta: f64, extra: &[f64]) -> Check {
    let coarse = bk_cusum(data, model, &BkSpec::new(theta), None).map_err(|e| e.to_string())?;
    let spec = BkSpec {
        ctimes: Some(extra.to_vec()),
        ..BkSpec::new(theta)
    };
    let fine = bk_cusum(data, model, &spec, None).map_err(|e| e.to_string())?;
    for p in &coarse.points {
        let q = fine.points.iter().find(|q| q.t == p.t).ok_or_else(|| format!("time {} lost", p.t))?;
        ensure(q.value == p.value, || format!("value at {} changed: {} vs {}", p.t, p.value, q.value))?;
    }
    Ok(())
}

pub fn cgr_maxtheta_monotone(data: &Dataset, model: &ManualModel, lo: f64, hi: f64) -> Check {
    let run = |m: f64| {
        let spec = CgrSpec {
            maxtheta: m,
            method: CgrMethod::Rescan,
            ..CgrSpec::default()
        };
        cgr_cusum(data, model, &spec, None).map_err(|e| e.to_string())
    };
    let (a, b) = (run(lo)?, run(hi)?);
    for (p, q) in a.points.iter().zip(&b.points) {
        ensure(q.value >= p.value - 1e-12, || format!("CGR fell from {} to {} at {}", p.value, q.value, p.t))?;
    }
    Ok(())
}

/// A unit flagged at a stricter level is flagged the same way at a looser one.
pub fn funnel_conflev_monotone(data: &Dataset, levels: &[f64]) -> Check {
    let mut levels = levels.to_vec();
    levels.sort_by(f64::total_cmp);
    let opts = FunnelOptions {
        conflevs: levels.clone(),
        ..FunnelOptions::new(10.0)
    };
    let Ok(s) = funnel_summary(data, None, &opts) else {
        return Ok(());
    };
    for r in &s.rows {
        for k in 1..levels.len() {
            let (loose, strict) = (r.classification[k - 1], r.classification[k]);
            if strict != Classification::InControl {
                ensure(loose == strict, || format!("unit {} is {strict:?} at {} but {loose:?} at {}", r.unit, levels[k], levels[k - 1]))?;
            }
        }
    }
    Ok(())
}

pub fn runlength_monotone(chart: &Chart, h1: f64, h2: f64) -> Check {
    let (lo, hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
    let a = chart.runlength(lo).map_err(|e| e.to_string())?;
    let b = chart.runlength(hi).map_err(|e| e.to_string())?;
    ensure(a <= b, || format!("runlength({lo}) = {a} > runlength({hi}) = {b}"))?;
    for p in &chart.points {
        let t = p.t - chart.start_time;
        let m = chart.chart_max(Some((chart.start_time, p.t))).map_err(|e| e.to_string())?;
        ensure((a <= t) == (m >= lo), || format!("runlength/chart_max disagree at {t}"))?;
    }
    Ok(())
}

/// Identical results for every worker count.
pub fn workers_deterministic(seed: u64, workers: &[usize]) -> Check {
    let model: RiskModel = ManualModel::new(Vec::<(String, f64)>::new())
        .with_baseline(Baseline::rate(0.02).unwrap())
        .into();
    let inputs = SimInputs {
        baseline_data: None,
        model: Some(&model),
    };
    for chart in [LimitChart::Bk { theta: 0.7, truncation: None }, LimitChart::Cgr { maxtheta: 6.0, truncation: None }] {
        let mut cfg = SimConfig::new(chart, 60.0, 0.1, 1.0);
        cfg.n_sim = 16;
        cfg.seed = seed;
        let mut first = None;
        for &w in workers {
            let r = control_limit(&cfg, &inputs, &RunOptions { workers: Some(w), progress: None }).map_err(|e| e.to_string())?;
            let bits: Vec<u64> = r.maxima.iter().map(|m| m.to_bits()).collect();
            match &first {
                None => first = Some((bits, r.h.to_bits())),
                Some(f) => ensure(f == &(bits, r.h.to_bits()), || format!("{w} workers changed the result"))?,
            }
        }
    }
    Ok(())
}
