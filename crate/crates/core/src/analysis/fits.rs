//! Weighted least-squares fitters and curve crossings.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::stats::{weighted_linear_fit, LinearFit};
use super::{bootstrap_errors, DataPoint, DataSeries, Diagnostics, FitError, FitOptions, FitResult, FitResultOr};

fn require_sigmas(points: &[DataPoint]) -> FitResultOr<()> {
    for p in points {
        if !(p.sigma > 0.0 && p.sigma.is_finite()) {
            return Err(FitError::InvalidInput(format!("sigma must be positive and finite, got {} at L={}", p.sigma, p.size)));
        }
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(FitError::InvalidInput(format!("non-finite point at L={}", p.size)));
        }
    }
    Ok(())
}

fn require_sizes(series: &DataSeries, n: usize) -> FitResultOr<()> {
    let got = series.distinct_sizes().len();
    if got < n {
        return Err(FitError::InsufficientData(format!("need at least {n} sizes, got {got}")));
    }
    Ok(())
}

fn chi2_per_dof(f: &LinearFit, n: usize) -> f64 {
    if n > 2 { f.chi2 / (n - 2) as f64 } else { 0.0 }
}

fn result(names: &[&str], values: &[f64], errors: BTreeMap<String, f64>, quality: f64, diagnostics: Diagnostics) -> FitResult {
    FitResult {
        params: names.iter().zip(values).map(|(n, v)| (n.to_string(), *v)).collect(),
        errors,
        quality,
        diagnostics,
        provenance: Vec::new(),
    }
}

/// Straight-line fit after mapping each point to `(fx, fy, fsigma)`.
fn mapped_line(points: &[DataPoint], map: impl Fn(&DataPoint) -> Option<(f64, f64, f64)>) -> Option<(LinearFit, Vec<(f64, f64)>)> {
    let mut x = Vec::with_capacity(points.len());
    let mut y = Vec::with_capacity(points.len());
    let mut s = Vec::with_capacity(points.len());
    for p in points {
        let (a, b, c) = map(p)?;
        x.push(a);
        y.push(b);
        s.push(c);
    }
    let fit = weighted_linear_fit(&x, &y, &s)?;
    Some((fit, x.into_iter().zip(y).collect()))
}

fn line_result(
    points: &[DataPoint],
    opts: FitOptions,
    names: [&str; 2],
    map: impl Fn(&DataPoint) -> Option<(f64, f64, f64)> + Sync,
    params: impl Fn(&LinearFit) -> [f64; 2] + Sync,
) -> FitResultOr<FitResult> {
    let (fit, xy) = mapped_line(points, &map).ok_or_else(|| FitError::InvalidInput("degenerate abscissae".into()))?;
    let residuals = xy.iter().map(|(x, y)| y - fit.predict(*x)).collect();
    let errors = bootstrap_errors(points, &names, opts, |pts| mapped_line(pts, &map).map(|(f, _)| params(&f).to_vec()));
    Ok(result(&names, &params(&fit), errors, chi2_per_dof(&fit, points.len()), Diagnostics { residuals, ..Default::default() }))
}

/// Coefficient `alpha` of `S = alpha ln L + intercept`.
pub fn fit_log_coefficient(data: &DataSeries, opts: FitOptions) -> FitResultOr<FitResult> {
    require_sizes(data, 3)?;
    let points = data.canonical();
    require_sigmas(&points)?;
    line_result(
        &points,
        opts,
        ["alpha", "intercept"],
        |p| Some(((p.size as f64).ln(), p.y, p.sigma)),
        |f| [f.slope, f.intercept],
    )
}

/// `(a, b)` of `alpha(n) = a/n + b`. Points carry the Rényi index in `x`;
/// `x = inf` stands for the min-entropy.
pub fn fit_alpha_form(alphas: &DataSeries, opts: FitOptions) -> FitResultOr<FitResult> {
    let mut ns: Vec<f64> = alphas.points.iter().map(|p| p.x).collect();
    ns.sort_by(f64::total_cmp);
    ns.dedup();
    if ns.len() < 3 || !ns.contains(&1.0) || !ns.iter().any(|&n| n >= 4.0) {
        return Err(FitError::InsufficientData("need at least three distinct n including n = 1 and some n >= 4".into()));
    }
    if ns.iter().any(|&n| !(n >= 1.0)) {
        return Err(FitError::InvalidInput("Rényi indices must be >= 1".into()));
    }
    let points = alphas.canonical();
    for p in &points {
        if !(p.sigma > 0.0 && p.sigma.is_finite() && p.y.is_finite()) {
            return Err(FitError::InvalidInput(format!("bad point at n = {}", p.x)));
        }
    }
    line_result(&points, opts, ["a", "b"], |p| Some((1.0 / p.x, p.y, p.sigma)), |f| [f.slope, f.intercept])
}

/// Exponent of `I2 ~ amplitude * L^(-eta)`.
pub fn power_fit(data: &DataSeries, opts: FitOptions) -> FitResultOr<FitResult> {
    require_sizes(data, 3)?;
    let points = data.canonical();
    require_sigmas(&points)?;
    if points.iter().any(|p| p.y <= 0.0) {
        return Err(FitError::InvalidInput("power fit needs strictly positive values".into()));
    }
    line_result(
        &points,
        opts,
        ["eta", "amplitude"],
        |p| (p.y > 0.0).then(|| ((p.size as f64).ln(), p.y.ln(), p.sigma / p.y)),
        |f| [-f.slope, f.intercept.exp()],
    )
}

/// Free-energy density `f = F / (v L t)`.
pub fn free_energy_density(free_energy: f64, v: f64, sites: usize, steps: usize) -> f64 {
    free_energy / (v * sites as f64 * steps as f64)
}

struct CasimirFit {
    c_eff: f64,
    m_inf: f64,
    b: f64,
    slopes: Vec<(usize, f64)>,
    single: bool,
}

fn casimir_core(points: &[DataPoint], lmin_sweep: &[usize]) -> Option<CasimirFit> {
    let mut slopes = Vec::new();
    let (mut xs, mut ms, mut ss) = (Vec::new(), Vec::new(), Vec::new());
    for &lmin in lmin_sweep {
        let above: Vec<&DataPoint> = points.iter().filter(|p| p.size > lmin).collect();
        let mut sizes: Vec<usize> = above.iter().map(|p| p.size).collect();
        sizes.dedup();
        if sizes.len() < 2 {
            continue;
        }
        let x: Vec<f64> = above.iter().map(|p| 1.0 / (p.size as f64).powi(2)).collect();
        let y: Vec<f64> = above.iter().map(|p| p.y).collect();
        let s: Vec<f64> = above.iter().map(|p| p.sigma).collect();
        let fit = weighted_linear_fit(&x, &y, &s)?;
        slopes.push((lmin, fit.slope));
        xs.push(1.0 / (lmin as f64).powi(2));
        ms.push(fit.slope);
        ss.push(fit.slope_err);
    }
    let (m_inf, b, single) = match ms.len() {
        0 => return None,
        1 => (ms[0], 0.0, true),
        _ => {
            let f = weighted_linear_fit(&xs, &ms, &ss)?;
            (f.intercept, f.slope, false)
        }
    };
    Some(CasimirFit { c_eff: -6.0 * m_inf / PI, m_inf, b, slopes, single })
}

/// Effective central charge from area-normalized free-energy densities.
/// Each `L_min` in the sweep yields the slope of `f` against `1/L^2` over
/// the sizes `L > L_min`; those slopes are extrapolated linearly in
/// `1/L_min^2`.
pub fn casimir_fit(f_of_l: &DataSeries, lmin_sweep: &[usize], opts: FitOptions) -> FitResultOr<FitResult> {
    require_sizes(f_of_l, 4)?;
    if lmin_sweep.is_empty() || lmin_sweep.contains(&0) {
        return Err(FitError::InvalidInput("L_min sweep must be non-empty and positive".into()));
    }
    let points = f_of_l.canonical();
    require_sigmas(&points)?;
    let fit = casimir_core(&points, lmin_sweep)
        .ok_or_else(|| FitError::InsufficientData("every L_min leaves fewer than two sizes".into()))?;

    let mut diagnostics = Diagnostics::default();
    for (lmin, m) in &fit.slopes {
        diagnostics.extra.insert(format!("m_{lmin}"), *m);
    }
    diagnostics.extra.insert("b".into(), fit.b);
    if fit.single {
        diagnostics.warnings.push("only one L_min usable; m(inf) taken as that slope".into());
    }
    let skipped = lmin_sweep.len() - fit.slopes.len();
    if skipped > 0 {
        diagnostics.warnings.push(format!("{skipped} L_min value(s) skipped for lack of sizes"));
    }
    // residuals of f against the final Casimir line through the full data
    let x: Vec<f64> = points.iter().map(|p| 1.0 / (p.size as f64).powi(2)).collect();
    let y: Vec<f64> = points.iter().map(|p| p.y).collect();
    let f_inf = y.iter().zip(&x).map(|(y, x)| y - fit.m_inf * x).sum::<f64>() / y.len() as f64;
    diagnostics.residuals = y.iter().zip(&x).map(|(y, x)| y - f_inf - fit.m_inf * x).collect();
    diagnostics.extra.insert("f_inf".into(), f_inf);

    let names = ["c_eff", "m_inf"];
    let errors = bootstrap_errors(&points, &names, opts, |pts| casimir_core(pts, lmin_sweep).map(|f| vec![f.c_eff, f.m_inf]));
    let quality = diagnostics
        .residuals
        .iter()
        .zip(&points)
        .map(|(r, p)| (r / p.sigma).powi(2))
        .sum::<f64>()
        / points.len().saturating_sub(2).max(1) as f64;
    Ok(result(&names, &[fit.c_eff, fit.m_inf], errors, quality, diagnostics))
}

/// `v = ln(1 + sqrt 2) L / (pi t*)`.
pub fn anisotropy_from_t_star(t_star: f64, sites: usize) -> f64 {
    (1.0 + 2f64.sqrt()).ln() * sites as f64 / (PI * t_star)
}

/// Value of a curve at `x` by linear interpolation (exact on grid points).
fn curve_at(points: &[DataPoint], x: f64) -> Option<f64> {
    let mut pts: Vec<&DataPoint> = points.iter().collect();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x));
    if let Some(p) = pts.iter().find(|p| p.x == x) {
        return Some(p.y);
    }
    let k = pts.partition_point(|p| p.x < x);
    if k == 0 || k == pts.len() {
        return None;
    }
    let (a, b) = (pts[k - 1], pts[k]);
    Some(a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x))
}

fn interpolate_t_star(dt: (f64, f64), temporal: (f64, f64), spatial: f64) -> FitResultOr<f64> {
    let (t1, t2) = temporal;
    let (low, high) = (t1.min(t2), t1.max(t2));
    if !(spatial >= low && spatial <= high) {
        return Err(FitError::Bracketing { spatial, low, high });
    }
    if t1 == spatial {
        return Ok(dt.0);
    }
    Ok(dt.0 + (dt.1 - dt.0) * (spatial - t1) / (t2 - t1))
}

/// Anisotropy factor from two temporal I2 curves (at separations `dt.0 <
/// dt.1`) and the antipodal spatial I2 curve, all read at control value
/// `at`. The crossing time `t*` is the linear interpolation in `dt`.
pub fn anisotropy_factor(
    temporal: [(f64, &[DataPoint]); 2],
    spatial: &[DataPoint],
    at: f64,
    sites: usize,
    opts: FitOptions,
) -> FitResultOr<FitResult> {
    let [(dt1, c1), (dt2, c2)] = temporal;
    if !(dt1 < dt2) || dt1 <= 0.0 {
        return Err(FitError::InvalidInput(format!("need 0 < dt1 < dt2, got {dt1}, {dt2}")));
    }
    // tag curves through `size` so a single bootstrap resamples all three
    let mut tagged: Vec<DataPoint> = Vec::new();
    for (tag, curve) in [(0usize, spatial), (1, c1), (2, c2)] {
        for p in curve {
            tagged.push(DataPoint { size: tag, ..p.clone() });
        }
    }
    tagged.sort_by(|a, b| a.size.cmp(&b.size).then(a.x.total_cmp(&b.x)));
    let evaluate = |pts: &[DataPoint]| -> FitResultOr<(f64, [f64; 3])> {
        let pick = |tag: usize| -> FitResultOr<f64> {
            let curve: Vec<DataPoint> = pts.iter().filter(|p| p.size == tag).cloned().collect();
            curve_at(&curve, at).ok_or_else(|| FitError::InvalidInput(format!("control value {at} outside curve {tag}")))
        };
        let (s, a, b) = (pick(0)?, pick(1)?, pick(2)?);
        Ok((interpolate_t_star((dt1, dt2), (a, b), s)?, [s, a, b]))
    };
    let (t_star, [s, a, b]) = evaluate(&tagged)?;
    let v = anisotropy_from_t_star(t_star, sites);

    let names = ["v", "t_star"];
    let errors = bootstrap_errors(&tagged, &names, opts, |pts| {
        evaluate(pts).ok().map(|(t, _)| vec![anisotropy_from_t_star(t, sites), t])
    });
    let mut diagnostics = Diagnostics::default();
    diagnostics.extra.insert("spatial".into(), s);
    diagnostics.extra.insert("temporal_dt1".into(), a);
    diagnostics.extra.insert("temporal_dt2".into(), b);
    Ok(result(&names, &[v, t_star], errors, 0.0, diagnostics))
}

/// Where the curves of two consecutive sizes cross.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub small: usize,
    pub large: usize,
    pub x: f64,
    /// Number of sign changes of the difference; more than one means the
    /// reported crossing was picked as the steepest.
    pub sign_changes: usize,
}

fn crossing_of(a: &[DataPoint], b: &[DataPoint]) -> Option<(f64, usize)> {
    let mut xs: Vec<f64> = a.iter().map(|p| p.x).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let diffs: Vec<(f64, f64)> = xs
        .iter()
        .filter_map(|&x| Some((x, curve_at(b, x)? - curve_at(a, x)?)))
        .collect();
    let mut best: Option<(f64, f64)> = None;
    let mut changes = 0;
    for w in diffs.windows(2) {
        let ((x0, d0), (x1, d1)) = (w[0], w[1]);
        let root = if d0 == 0.0 {
            x0
        } else if d0 * d1 < 0.0 {
            x0 - d0 * (x1 - x0) / (d1 - d0)
        } else {
            continue;
        };
        changes += 1;
        let steep = (d1 - d0).abs();
        if best.is_none_or(|(_, s)| steep > s) {
            best = Some((root, steep));
        }
    }
    if best.is_none() {
        if let Some(&(x, d)) = diffs.last() {
            if d == 0.0 {
                return Some((x, 1));
            }
        }
    }
    best.map(|(x, _)| (x, changes))
}

/// Crossings of each pair of consecutive sizes in `series`.
pub fn find_crossings(series: &DataSeries) -> FitResultOr<Vec<Crossing>> {
    let sizes = series.distinct_sizes();
    if sizes.len() < 2 {
        return Err(FitError::InsufficientData("crossings need two sizes".into()));
    }
    let points = series.canonical();
    let curve = |l: usize| -> Vec<DataPoint> { points.iter().filter(|p| p.size == l).cloned().collect() };
    sizes
        .windows(2)
        .map(|w| {
            let (x, sign_changes) = crossing_of(&curve(w[0]), &curve(w[1])).ok_or(FitError::NoCrossing(w[0], w[1]))?;
            Ok(Crossing { small: w[0], large: w[1], x, sign_changes })
        })
        .collect()
}

/// Crossings with bootstrap errors. Parameters: `x_cross` (mean over
/// pairs), `x_cross_{a}_{b}` per pair, and `drift` (last pair minus first).
pub fn crossing_fit(series: &DataSeries, opts: FitOptions) -> FitResultOr<FitResult> {
    let crossings = find_crossings(series)?;
    let values = |cs: &[Crossing]| -> Vec<f64> {
        let mut v = vec![cs.iter().map(|c| c.x).sum::<f64>() / cs.len() as f64, cs[cs.len() - 1].x - cs[0].x];
        v.extend(cs.iter().map(|c| c.x));
        v
    };
    let mut names: Vec<String> = vec!["x_cross".into(), "drift".into()];
    names.extend(crossings.iter().map(|c| format!("x_cross_{}_{}", c.small, c.large)));
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let points = series.canonical();
    let errors = bootstrap_errors(&points, &name_refs, opts, |pts| {
        let cs = find_crossings(&DataSeries::new("", pts.to_vec())).ok()?;
        Some(values(&cs))
    });
    let mut diagnostics = Diagnostics::default();
    for c in &crossings {
        if c.sign_changes > 1 {
            diagnostics.warnings.push(format!("sizes {} and {} cross {} times", c.small, c.large, c.sign_changes));
        }
    }
    Ok(result(&name_refs, &values(&crossings), errors, 0.0, diagnostics))
}
