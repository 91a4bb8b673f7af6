//! End-to-end runs driven by a [`RunConfig`]: stage functions behind the
//! CLI subcommands, the result cache, CSV/JSON writers and the full report.
//!
//! CSV files start with a `# schema_version=N` comment line followed by a
//! header; floats are written with 17 significant digits (`{:.16e}`), the
//! decimal point is `.` and lines end in `\n`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{
    integral_i_closed_form, leading_term, leading_term_curvature_form, weierstrass_check, IsotropicBound, LeadingTermInputs, LocalPatch,
    PatchOptions,
};
use crate::bands::{
    auto_cutoff, check_assumptions, compute_bands, find_gaps, locate_edge, AssumptionReport, AssumptionTolerances, BandEdge, BandGrid, EdgeTarget,
    GapSide, SpectralGap,
};
use crate::config::{GapSelection, RunConfig, SCHEMA_VERSION};
use crate::dispersion::{bloch_pair, concavity_radius, continue_ray_partial, energy_gradient, BandDispersion, DispersionOptions, StepControl};
use crate::error::{Error, Result};
use crate::geometry::{support_point, SupportPoint, SupportTolerances};
use crate::linalg::C64;
use crate::operator::{hermiticity_residual, FourierIndexSet, PeriodicOperator};
use crate::oracle::{green_bz_integral, green_shifted_contour, OracleOptions};
use crate::par::{init_threads, Exec};
use crate::validation::{approaches_one, fit_decay, non_increasing, ray_sweeps, remainder_profile, FitResult, RaySweepTable, SweepContext};

/// Float formatting shared by every CSV file.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV text builder with the schema line and header already written.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[String]) -> Self {
        let mut text = format!("# schema_version={SCHEMA_VERSION}\n");
        text.push_str(&header.join(","));
        text.push('\n');
        Self { text }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.text.as_bytes())?;
        Ok(())
    }
}

fn cols(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn nums(v: &[f64]) -> Vec<String> {
    v.iter().map(|&x| fmt_f64(x)).collect()
}

/// Operator, execution policy and cache location for one config.
pub struct Session {
    pub cfg: RunConfig,
    pub op: PeriodicOperator,
    pub exec: Exec,
    pub op_hash: String,
}

/// Located edge with the data it came from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeStage {
    pub cutoff: usize,
    pub gaps: Vec<SpectralGap>,
    pub gap: Option<SpectralGap>,
    pub edge: BandEdge,
    /// Width between the refined edges of the selected gap.
    pub gap_width: Option<f64>,
}

impl Session {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let op = cfg.build_operator()?;
        if cfg.threads > 0 {
            init_threads(cfg.threads);
        }
        let exec = if cfg.threads == 1 { Exec::Sequential } else { Exec::default() };
        let op_hash = op.content_hash();
        Ok(Self { cfg, op, exec, op_hash })
    }

    pub fn output_dir(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.cfg.output_dir)?;
        Ok(self.cfg.output_dir.clone())
    }

    fn cached<T, P, F>(&self, stage: &str, params: &P, compute: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        P: Serialize,
        F: FnOnce() -> Result<T>,
    {
        if !self.cfg.cache {
            return compute();
        }
        let key = serde_json::to_string(&(stage, &self.op_hash, params)).map_err(|e| Error::Serde(e.to_string()))?;
        let name = format!("{stage}-{}.json", hex::encode(Sha256::digest(key.as_bytes())));
        let dir = self.cfg.output_dir.join("cache");
        let path = dir.join(name);
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(v) = serde_json::from_str(&text) {
                return Ok(v);
            }
        }
        let v = compute()?;
        std::fs::create_dir_all(&dir)?;
        std::fs::write(&path, serde_json::to_string(&v).map_err(|e| Error::Serde(e.to_string()))?)?;
        Ok(v)
    }

    /// Configured cutoff, or the smallest one at which the lowest bands at
    /// `k = 0` are stable to `1e-10`.
    pub fn cutoff(&self) -> Result<usize> {
        if self.cfg.cutoff > 0 {
            return Ok(self.cfg.cutoff);
        }
        let d = self.op.dim();
        self.cached("cutoff", &self.cfg.n_bands, || auto_cutoff(&self.op, &vec![0.0; d], self.cfg.n_bands, 1e-10, 2, 10))
    }

    pub fn bands(&self) -> Result<BandGrid> {
        let n = self.cutoff()?;
        let params = (n, self.cfg.band_resolution, self.cfg.n_bands);
        self.cached("bands", &params, || compute_bands(&self.op, self.cfg.band_resolution, self.cfg.n_bands, n, self.exec))
    }

    pub fn edge(&self) -> Result<EdgeStage> {
        let bands = self.bands()?;
        let cutoff = bands.cutoff;
        let gaps = find_gaps(&bands);
        let params = (cutoff, self.cfg.band_resolution, self.cfg.n_bands, &self.cfg.gap, self.cfg.tolerances.tol_sym);
        self.cached("edge", &params, || {
            let (target, gap, other) = match &self.cfg.gap {
                GapSelection::Named(_) => (EdgeTarget::bottom(), None, None),
                GapSelection::Gap { index, side } => {
                    let gap = gaps.get(index - 1).cloned().ok_or_else(|| {
                        Error::InvalidInput(if gaps.is_empty() {
                            "no finite gap among the computed bands".to_string()
                        } else {
                            format!("gap {index} requested but only {} found", gaps.len())
                        })
                    })?;
                    let other = match side {
                        GapSide::Lower => GapSide::Upper,
                        GapSide::Upper => GapSide::Lower,
                    };
                    (EdgeTarget::from_gap(&gap, *side), Some(gap), Some(EdgeTarget::from_gap(&gaps[index - 1], other)))
                }
            };
            let mut edge = locate_edge(&self.op, target, &bands, cutoff, self.exec)?;
            let tol = AssumptionTolerances { tol_sym: self.cfg.tolerances.tol_sym, ..AssumptionTolerances::default() };
            edge.assumptions = check_assumptions(&self.op, &edge, &bands, &tol)?;
            let gap_width = match other {
                Some(t) => Some((locate_edge(&self.op, t, &bands, cutoff, self.exec)?.edge_energy - edge.edge_energy).abs()),
                None => None,
            };
            Ok(EdgeStage { cutoff, gaps: gaps.clone(), gap, edge, gap_width })
        })
    }

    /// Working energies from `lambda` or `lambda_gap_fraction`.
    pub fn lambdas(&self, stage: &EdgeStage) -> Result<Vec<f64>> {
        if !self.cfg.lambda.is_empty() {
            if let Some(w) = stage.gap_width {
                if let Some(l) = self.cfg.lambda.iter().find(|l| -**l >= w) {
                    return Err(Error::NotInGap { lambda: stage.edge.to_physical(*l), distance: 0.0, at: "the far edge of the gap".into() });
                }
            }
            return Ok(self.cfg.lambda.clone());
        }
        let w = stage.gap_width.ok_or_else(|| Error::Config("lambda_gap_fraction needs a gap".into()))?;
        Ok(self.cfg.lambda_gap_fraction.iter().map(|f| -f * w).collect())
    }

    pub fn dispersion_options(&self) -> DispersionOptions {
        DispersionOptions { tol_real: self.cfg.tolerances.tol_real, tol_f: self.cfg.tolerances.tol_f, ..DispersionOptions::default() }
    }

    pub fn support_tolerances(&self) -> SupportTolerances {
        let t = self.cfg.tolerances.tol_gauss;
        SupportTolerances { tol_level: t, tol_gauss: t, ..SupportTolerances::default() }
    }

    pub fn oracle_options(&self, stage: &EdgeStage) -> OracleOptions {
        let o = &self.cfg.oracle;
        OracleOptions {
            cutoff: if o.cutoff > 0 { o.cutoff } else { stage.cutoff },
            grid: o.grid,
            max_doublings: o.max_doublings,
            tol_quad: self.cfg.tolerances.tol_quad,
            window_width: o.window_width,
            ..OracleOptions::default()
        }
    }

    pub fn patch_options(&self) -> PatchOptions {
        PatchOptions { eta_radius: self.cfg.asymptotics.eta_radius, nodes: self.cfg.asymptotics.nodes, ..PatchOptions::default() }
    }

    pub fn model<'a>(&'a self, stage: &'a EdgeStage) -> Result<BandDispersion<'a>> {
        BandDispersion::new(&self.op, &stage.edge, self.dispersion_options(), self.exec)
    }

    pub fn source_point(&self) -> Result<Vec<f64>> {
        let d = self.op.dim();
        if self.cfg.y.is_empty() {
            return Ok(vec![0.0; d]);
        }
        if self.cfg.y.len() != d {
            return Err(Error::Config(format!("y has dimension {}, expected {d}", self.cfg.y.len())));
        }
        Ok(self.cfg.y.clone())
    }
}

/// Band CSV: `k1..kd, lambda1..lambdan`.
pub fn bands_csv(bands: &BandGrid) -> Csv {
    let mut csv = Csv::new(&[cols("k", bands.d), cols("lambda", bands.n_bands)].concat());
    for (k, v) in bands.kpoints.iter().zip(&bands.values) {
        csv.row(&[nums(k), nums(v)].concat());
    }
    csv
}

/// Rays `β = t·u` up to the first loss of concavity.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DispersionStage {
    pub concavity_radius: f64,
    pub directions: Vec<Vec<f64>>,
}

pub fn dispersion_csv(model: &BandDispersion<'_>, directions: &[Vec<f64>], ctl: &StepControl) -> Result<Csv> {
    let d = model.op.dim();
    let hess: Vec<String> = (1..=d).flat_map(|p| (1..=d).map(move |q| format!("hess{p}{q}"))).collect();
    let mut csv = Csv::new(
        &[
            vec!["direction".to_string()],
            cols("u", d),
            vec!["t".into()],
            cols("beta", d),
            vec!["energy".into()],
            cols("grad", d),
            hess,
            vec!["reality_defect".into(), "isolation_margin".into(), "residual".into()],
        ]
        .concat(),
    );
    let rays = model.exec.try_map(directions.len(), |i| continue_ray_partial(model, &directions[i], ctl).map(|r| r.0))?;
    for (i, (u, samples)) in directions.iter().zip(rays).enumerate() {
        for s in samples {
            let t = s.beta.iter().map(|b| b * b).sum::<f64>().sqrt();
            let h: Vec<f64> = (0..d).flat_map(|p| (0..d).map(move |q| (p, q))).map(|(p, q)| s.hessian[(p, q)]).collect();
            csv.row(
                &[
                    vec![i.to_string()],
                    nums(u),
                    vec![fmt_f64(t)],
                    nums(&s.beta),
                    vec![fmt_f64(s.energy)],
                    nums(&s.grad),
                    nums(&h),
                    nums(&[s.reality_defect, s.isolation_margin, s.residual]),
                ]
                .concat(),
            );
        }
    }
    Ok(csv)
}

/// Support points with residuals recomputed independently of the solver.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupportRecord {
    pub support: SupportPoint,
    pub level_residual: f64,
    pub gauss_residual: f64,
}

pub fn support_records(model: &BandDispersion<'_>, lambda: f64, directions: &[Vec<f64>], tol: &SupportTolerances) -> Result<Vec<SupportRecord>> {
    model.exec.try_map(directions.len(), |i| {
        let sp = support_point(model, lambda, &directions[i], tol)?;
        let (e, g, ..) = energy_gradient(model, &sp.beta_s, None)?;
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gauss = g.iter().zip(&sp.s).map(|(a, b)| (a / gn + b).powi(2)).sum::<f64>().sqrt();
        Ok(SupportRecord { level_residual: (e - lambda).abs(), gauss_residual: gauss, support: sp })
    })
}

pub fn support_csv(records: &[SupportRecord]) -> Csv {
    let d = records.first().map_or(0, |r| r.support.s.len());
    let mut csv = Csv::new(
        &[
            vec!["lambda".to_string()],
            cols("s", d),
            cols("beta_s", d),
            vec![
                "h".into(),
                "grad_norm".into(),
                "proj_hess_det".into(),
                "curvature".into(),
                "level_residual".into(),
                "gauss_residual".into(),
            ],
        ]
        .concat(),
    );
    for r in records {
        let sp = &r.support;
        csv.row(
            &[
                vec![fmt_f64(sp.lambda)],
                nums(&sp.s),
                nums(&sp.beta_s),
                nums(&[sp.h, sp.grad_norm, sp.proj_hess_det, sp.curvature, r.level_residual, r.gauss_residual]),
            ]
            .concat(),
        );
    }
    csv
}

/// Leading term in both forms and the `I` integral along one direction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsymptoteRow {
    pub r: f64,
    pub lead: C64,
    pub lead_curvature: C64,
    pub i_numeric: C64,
    pub i_closed: f64,
}

impl AsymptoteRow {
    pub fn i_ratio(&self) -> f64 {
        self.i_numeric.re / self.i_closed
    }

    pub fn form_mismatch(&self) -> f64 {
        (self.lead - self.lead_curvature).norm() / self.lead.norm()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsymptoteTable {
    pub lambda: f64,
    pub s: Vec<f64>,
    pub eta_radius: f64,
    pub rows: Vec<AsymptoteRow>,
    /// `quadratic_residual` per Weierstrass sampling radius.
    pub weierstrass: Vec<(f64, f64)>,
}

pub fn asymptote_table(
    session: &Session,
    stage: &EdgeStage,
    model: &BandDispersion<'_>,
    sp: &SupportPoint,
    y: &[f64],
    r_list: &[f64],
) -> Result<AsymptoteTable> {
    let pair = bloch_pair(model, &sp.beta_s)?;
    let patch = LocalPatch::build(model, sp, &stage.edge.k0, stage.edge.orientation, &session.patch_options())?;
    let mut rows = Vec::new();
    for &r in r_list {
        let x: Vec<f64> = y.iter().zip(&sp.s).map(|(a, b)| a + r * b).collect();
        let inp = LeadingTermInputs { edge: &stage.edge, sp, pair: &pair, x, y: y.to_vec() };
        rows.push(AsymptoteRow {
            r,
            lead: leading_term(&inp)?,
            lead_curvature: leading_term_curvature_form(&inp)?,
            i_numeric: patch.integral_i(r)?,
            i_closed: integral_i_closed_form(sp, r),
        });
    }
    let mut weierstrass = Vec::new();
    if sp.s.len() == 2 {
        for &rad in &session.cfg.asymptotics.weierstrass_radii {
            weierstrass.push((rad, weierstrass_check(model, sp, rad, 4)?.quadratic_residual));
        }
    }
    Ok(AsymptoteTable { lambda: sp.lambda, s: sp.s.clone(), eta_radius: patch.radius, rows, weierstrass })
}

pub fn asymptote_csv(tables: &[AsymptoteTable]) -> Csv {
    let d = tables.first().map_or(0, |t| t.s.len());
    let mut csv = Csv::new(
        &[
            vec!["lambda".to_string()],
            cols("s", d),
            vec![
                "r".into(),
                "re_leading".into(),
                "im_leading".into(),
                "re_leading_curvature".into(),
                "im_leading_curvature".into(),
                "re_i_numeric".into(),
                "im_i_numeric".into(),
                "i_closed".into(),
                "i_ratio".into(),
                "form_mismatch".into(),
            ],
        ]
        .concat(),
    );
    for t in tables {
        for r in &t.rows {
            csv.row(
                &[
                    vec![fmt_f64(t.lambda)],
                    nums(&t.s),
                    nums(&[
                        r.r,
                        r.lead.re,
                        r.lead.im,
                        r.lead_curvature.re,
                        r.lead_curvature.im,
                        r.i_numeric.re,
                        r.i_numeric.im,
                        r.i_closed,
                        r.i_ratio(),
                        r.form_mismatch(),
                    ]),
                ]
                .concat(),
            );
        }
    }
    csv
}

pub fn oracle_csv(tables: &[RaySweepTable]) -> Csv {
    let d = tables.first().map_or(0, |t| t.s.len());
    let mut csv = Csv::new(
        &[
            vec!["lambda".to_string(), "lambda_physical".into()],
            cols("s", d),
            vec![
                "h".into(),
                "r".into(),
                "re_oracle".into(),
                "im_oracle".into(),
                "re_leading".into(),
                "im_leading".into(),
                "abs_ratio".into(),
                "phase_diff".into(),
                "re_remainder".into(),
                "im_remainder".into(),
                "converged".into(),
                "grid".into(),
            ],
        ]
        .concat(),
    );
    for t in tables {
        for r in &t.rows {
            csv.row(
                &[
                    nums(&[t.lambda, t.lambda_physical]),
                    nums(&t.s),
                    nums(&[t.h, r.r, r.g_oracle.re, r.g_oracle.im, r.g_lead.re, r.g_lead.im, r.abs_ratio, r.phase_diff, r.remainder.re, r.remainder.im]),
                    vec![u8::from(r.converged).to_string(), r.grid.to_string()],
                ]
                .concat(),
            );
        }
    }
    csv
}

/// Outcome of one acceptance check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub criterion: String,
    pub status: Status,
    pub measured: f64,
    pub expected: String,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn new(criterion: &str, pass: bool, measured: f64, expected: &str, tolerance: f64, detail: String) -> Self {
        Self {
            criterion: criterion.into(),
            status: if pass { Status::Pass } else { Status::Fail },
            measured,
            expected: expected.into(),
            tolerance,
            detail,
        }
    }

    fn skipped(criterion: &str, detail: String) -> Self {
        Self { criterion: criterion.into(), status: Status::Skipped, measured: f64::NAN, expected: String::new(), tolerance: f64::NAN, detail }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub ok: bool,
    pub error: Option<String>,
    pub seconds: f64,
}

/// Per-direction results.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectionReport {
    pub lambda: f64,
    pub s: Vec<f64>,
    pub support: SupportPoint,
    pub fit: Option<FitResult>,
    pub fit_error: Option<String>,
}

/// The JSON report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub operator: OperatorInfo,
    pub gaps: Vec<SpectralGap>,
    pub gap_note: Option<String>,
    pub edge: Option<BandEdge>,
    pub assumptions: Option<AssumptionReport>,
    pub lambdas: Vec<f64>,
    pub concavity_radius: Option<f64>,
    pub isotropic_bound: Option<IsotropicBound>,
    pub directions: Vec<DirectionReport>,
    pub acceptance: Vec<Check>,
    pub stages: Vec<StageRecord>,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorInfo {
    pub dimension: usize,
    pub content_hash: String,
    pub cutoff: Option<usize>,
}

impl Report {
    /// Every check passed or was skipped and every stage succeeded.
    pub fn passed(&self) -> bool {
        self.stages.iter().all(|s| s.ok) && self.acceptance.iter().all(|c| c.status != Status::Fail)
    }
}

struct Recorder {
    stages: Vec<StageRecord>,
}

impl Recorder {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Option<T> {
        let t = Instant::now();
        let out = f();
        let seconds = t.elapsed().as_secs_f64();
        match out {
            Ok(v) => {
                self.stages.push(StageRecord { name: name.into(), ok: true, error: None, seconds });
                Some(v)
            }
            Err(e) => {
                self.stages.push(StageRecord { name: name.into(), ok: false, error: Some(e.to_string()), seconds });
                None
            }
        }
    }
}

/// Deterministic complex quasimomenta for the Hermiticity check.
fn probe_kpoints(d: usize, n: usize) -> Vec<Vec<C64>> {
    (0..n)
        .map(|i| {
            (0..d)
                .map(|p| {
                    let a = ((i * 7 + p * 3) as f64 * 0.618_033_988_749_895).fract();
                    let b = ((i * 5 + p * 11) as f64 * 0.414_213_562_373_095).fract();
                    C64::new(std::f64::consts::PI * (2.0 * a - 1.0), 0.8 * (2.0 * b - 1.0))
                })
                .collect()
        })
        .collect()
}

/// `max |λ_i(k) − λ_i(−k)|` on a symmetric band grid.
pub fn band_evenness(bands: &BandGrid) -> f64 {
    let r = bands.resolution;
    let mut worst = 0.0f64;
    for (flat, v) in bands.values.iter().enumerate() {
        let mut rem = flat;
        let mut mirror = 0;
        let mut stride = 1;
        for _ in 0..bands.d {
            let i = rem % r;
            rem /= r;
            mirror += (r - 1 - i) * stride;
            stride *= r;
        }
        for (a, b) in v.iter().zip(&bands.values[mirror]) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Runs every stage, writes CSV and JSON files into the output directory
/// and returns the report. Stage failures are recorded, not propagated.
pub fn full_report(cfg: &RunConfig) -> Result<Report> {
    let session = Session::new(cfg.clone())?;
    let out = session.output_dir()?;
    let d = session.op.dim();
    let mut rec = Recorder { stages: Vec::new() };
    let mut checks = Vec::new();
    let mut files: Vec<String> = Vec::new();
    let write = |name: &str, csv: &Csv, files: &mut Vec<String>| -> Result<()> {
        csv.write(&out.join(name))?;
        files.push(name.to_string());
        Ok(())
    };

    let herm = rec.run("hermiticity", || {
        let basis = FourierIndexSet::new(d, 3);
        let mut worst = 0.0f64;
        for k in probe_kpoints(d, 100) {
            worst = worst.max(hermiticity_residual(&session.op, &k, &basis)?);
        }
        Ok(worst)
    });
    if let Some(h) = herm {
        checks.push(Check::new("hermiticity", h <= 1e-13, h, "≤ 1e-13", 1e-13, "100 complex k".into()));
    }

    let bands = rec.run("bands", || session.bands());
    if let Some(b) = &bands {
        write("bands.csv", &bands_csv(b), &mut files)?;
        let ev = band_evenness(b);
        checks.push(Check::new("band_evenness", ev <= 1e-10, ev, "≤ 1e-10", 1e-10, format!("{}^{} grid", b.resolution, b.d)));
    }
    let gaps = bands.as_ref().map(find_gaps).unwrap_or_default();
    let gap_note = gaps.is_empty().then(|| "no finite gap".to_string());

    let stage = bands.as_ref().and_then(|_| rec.run("edge", || session.edge()));
    let mut report = Report {
        schema_version: SCHEMA_VERSION,
        operator: OperatorInfo { dimension: d, content_hash: session.op_hash.clone(), cutoff: stage.as_ref().map(|s| s.cutoff) },
        gaps,
        gap_note,
        edge: stage.as_ref().map(|s| s.edge.clone()),
        assumptions: stage.as_ref().map(|s| s.edge.assumptions.clone()),
        lambdas: Vec::new(),
        concavity_radius: None,
        isotropic_bound: None,
        directions: Vec::new(),
        acceptance: Vec::new(),
        stages: Vec::new(),
        files: Vec::new(),
    };
    if let Some(stage) = &stage {
        let a = &stage.edge.assumptions;
        checks.push(Check::new("assumptions", a.overall, f64::from(u8::from(a.overall)), "all of A1–A5", 0.0, format!("{a:?}")));
        run_edge_stages(&session, stage, &mut rec, &mut checks, &mut report, &mut files, &out)?;
    }

    report.acceptance = checks;
    report.stages = rec.stages;
    files.push("report.json".into());
    files.push("plot_sweeps.py".into());
    report.files = files;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report).map_err(|e| Error::Serde(e.to_string()))?)?;
    std::fs::write(out.join("plot_sweeps.py"), PLOT_SCRIPT)?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn run_edge_stages(
    session: &Session,
    stage: &EdgeStage,
    rec: &mut Recorder,
    checks: &mut Vec<Check>,
    report: &mut Report,
    files: &mut Vec<String>,
    out: &Path,
) -> Result<()> {
    let d = session.op.dim();
    let Some(model) = rec.run("dispersion", || session.model(stage)) else { return Ok(()) };
    let Some(lambdas) = rec.run("lambda", || session.lambdas(stage)) else { return Ok(()) };
    report.lambdas = lambdas.clone();
    let Some(directions) = rec.run("directions", || session.cfg.directions.resolve(d)) else { return Ok(()) };
    let Some(sweep_dirs) = rec.run("sweep_directions", || session.cfg.sweep_directions.resolve(d)) else { return Ok(()) };
    let Some(y) = rec.run("source_point", || session.source_point()) else { return Ok(()) };

    let ctl = StepControl::default();
    let ray_dirs: Vec<Vec<f64>> = sweep_dirs.clone();
    if let Some(csv) = rec.run("dispersion_rays", || dispersion_csv(&model, &ray_dirs, &ctl)) {
        csv.write(&out.join("dispersion.csv"))?;
        files.push("dispersion.csv".into());
    }
    report.concavity_radius = rec.run("concavity_radius", || concavity_radius(&model, &ray_dirs, &ctl));

    let tol = session.support_tolerances();
    let mut all_support = Vec::new();
    let mut all_asym = Vec::new();
    let mut all_sweeps = Vec::new();
    for &lambda in &lambdas {
        let Some(records) = rec.run(&format!("support λ={lambda}"), || support_records(&model, lambda, &directions, &tol)) else { continue };
        let level = records.iter().map(|r| r.level_residual).fold(0.0, f64::max);
        let gauss = records.iter().map(|r| r.gauss_residual).fold(0.0, f64::max);
        checks.push(Check::new("gauss_map_level", level <= 1e-10, level, "≤ 1e-10", 1e-10, format!("{} directions, λ = {lambda}", records.len())));
        checks.push(Check::new("gauss_map_normal", gauss <= 1e-10, gauss, "≤ 1e-10", 1e-10, format!("{} directions, λ = {lambda}", records.len())));

        let sweep_support: Vec<SupportPoint> = sweep_dirs
            .iter()
            .filter_map(|s| support_point(&model, lambda, s, &tol).ok())
            .collect();
        let asym: Vec<AsymptoteTable> = sweep_support
            .iter()
            .filter_map(|sp| rec.run(&format!("asymptotics λ={lambda} s={:?}", sp.s), || asymptote_table(session, stage, &model, sp, &y, &session.cfg.r_list)))
            .collect();
        let mismatch = asym.iter().flat_map(|t| t.rows.iter().map(|r| r.form_mismatch())).fold(0.0, f64::max);
        if !asym.is_empty() {
            checks.push(Check::new("prefactor_forms", mismatch <= 1e-8, mismatch, "≤ 1e-8 relative", 1e-8, format!("λ = {lambda}")));
        }
        if let (Some(t), Some(sp)) = (asym.first(), sweep_support.first()) {
            let gauge = gauge_check(stage, &model, sp, &y)?;
            checks.push(Check::new("gauge_invariance", gauge <= 1e-13, gauge, "≤ 1e-13 relative", 1e-13, "20 rescalings".into()));
            let w: Vec<f64> = t.weierstrass.iter().map(|p| p.1).collect();
            if w.len() >= 2 {
                let factor = w.windows(2).map(|p| p[0] / p[1]).fold(f64::INFINITY, f64::min);
                checks.push(Check::new("weierstrass_halving", factor >= 1.6, factor, "≥ 1.6", 1.6, format!("residuals {w:?}")));
            }
            let dev: Vec<f64> = t.rows.iter().map(|r| (r.i_ratio() - 1.0).abs()).collect();
            if dev.len() >= 2 {
                let strictly = dev.windows(2).all(|p| p[1] < p[0]);
                let last = *dev.last().unwrap_or(&f64::NAN);
                checks.push(Check::new("i_convergence", strictly && last <= 0.1, last, "strictly decreasing, ≤ 0.1 at the largest r", 0.1, format!("{dev:?}")));
            }
        }
        all_asym.extend(asym);

        let ctx = SweepContext {
            edge: &stage.edge,
            model: &model,
            lambda,
            y: y.clone(),
            oracle: session.oracle_options(stage),
            support: tol.clone(),
            exec: session.exec,
        };
        let Some(sweeps) = rec.run(&format!("oracle λ={lambda}"), || oracle_sweeps(session, &ctx)) else {
            all_support.extend(records);
            continue;
        };
        let unconverged = sweeps.iter().flat_map(|t| &t.rows).filter(|r| !r.converged).count();
        checks.push(Check::new("oracle_converged", unconverged == 0, unconverged as f64, "0 unconverged", 0.0, format!("λ = {lambda}")));
        let trend = sweeps.iter().all(|t| approaches_one(&t.abs_ratios()));
        checks.push(Check::new("abs_ratio_trend", trend, f64::from(u8::from(trend)), "|ratio − 1| non-increasing in r", 0.0, format!("λ = {lambda}")));
        let eps = session.cfg.asymptotics.epsilon;
        let prof_ok = sweeps.iter().all(|t| {
            let p: Vec<f64> = remainder_profile(t, eps).into_iter().map(|p| p.1).collect();
            let top = &p[p.len() / 2..];
            top.iter().all(|v| v.is_finite()) && non_increasing(top, 0.0)
        });
        checks.push(Check::new("remainder_profile", prof_ok, f64::from(u8::from(prof_ok)), "bounded, non-increasing on the top half", eps, format!("ε = {eps}")));

        for t in &sweeps {
            let Some(sp) = rec.run("sweep_support", || support_point(&model, lambda, &t.s, &tol)) else { continue };
            let (fit, fit_error) = match fit_decay(t) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            if let Some(f) = &fit {
                let rel = (f.exp_rate - t.h).abs() / t.h;
                checks.push(Check::new("decay_rate", rel <= 0.01, rel, "|a − h(s)|/h(s) ≤ 0.01", 0.01, format!("s = {:?}", t.s)));
                let db = (f.alg_exponent - (d as f64 - 1.0) / 2.0).abs();
                checks.push(Check::new("algebraic_exponent", db <= 0.1, f.alg_exponent, "(d − 1)/2 ± 0.1", 0.1, format!("s = {:?}", t.s)));
            } else {
                checks.push(Check::skipped("decay_rate", fit_error.clone().unwrap_or_default()));
            }
            report.directions.push(DirectionReport { lambda, s: t.s.clone(), support: sp, fit, fit_error });
        }

        if let Some(t) = sweeps.first() {
            if let (Some(row), Some(sp)) = (t.rows.first(), report.directions.iter().rev().find(|r| r.s == t.s).map(|r| &r.support)) {
                let x: Vec<f64> = y.iter().zip(&sp.s).map(|(a, b)| a + row.r * b).collect();
                let lp = stage.edge.to_physical(lambda);
                let base = session.oracle_options(stage);
                let opts = OracleOptions { max_doublings: base.max_doublings.max(4), ..base };
                let pair = rec.run("contour_consistency", || {
                    let a = green_bz_integral(&session.op, lp, &x, &y, &opts, session.exec)?;
                    let b = green_shifted_contour(&session.op, lp, sp, session.cfg.oracle.shift_fraction, &x, &y, &opts, session.exec)?;
                    Ok((a.value - b.value).norm() / a.value.norm())
                });
                if let Some(rel) = pair {
                    checks.push(Check::new("contour_consistency", rel <= 1e-6, rel, "≤ 1e-6 relative", 1e-6, format!("r = {}", row.r)));
                }
            }
        }
        let samples: Vec<(f64, f64)> = sweeps.iter().flat_map(|t| t.rows.iter().map(|r| (r.r, r.g_oracle.norm()))).collect();
        if let Some(r_min) = samples.iter().map(|p| p.0).reduce(f64::min) {
            if let Ok(b) = IsotropicBound::fit(lambda, d, &records.iter().map(|r| r.support.clone()).collect::<Vec<_>>(), &samples, r_min) {
                report.isotropic_bound = Some(b);
            }
        }
        all_sweeps.extend(sweeps);
        all_support.extend(records);
    }
    let eps = session.cfg.asymptotics.epsilon;
    for (name, csv) in [
        ("support.csv", support_csv(&all_support)),
        ("asymptote.csv", asymptote_csv(&all_asym)),
        ("weierstrass.csv", weierstrass_csv(&all_asym)),
        ("oracle.csv", oracle_csv(&all_sweeps)),
        ("fits.csv", fits_csv(&report.directions)),
        ("remainder.csv", remainder_csv(&all_sweeps, eps)),
    ] {
        csv.write(&out.join(name))?;
        files.push(name.into());
    }
    Ok(())
}

/// Oracle sweeps for every configured group of directions.
pub fn oracle_sweeps(session: &Session, ctx: &SweepContext<'_>) -> Result<Vec<RaySweepTable>> {
    let mut out = Vec::new();
    for (dirs, radii) in session.cfg.sweep_groups(session.op.dim())? {
        out.extend(ray_sweeps(ctx, &dirs, &radii)?);
    }
    Ok(out)
}

pub fn weierstrass_csv(tables: &[AsymptoteTable]) -> Csv {
    let d = tables.first().map_or(0, |t| t.s.len());
    let mut csv = Csv::new(&[vec!["lambda".to_string()], cols("s", d), vec!["radius".into(), "quadratic_residual".into()]].concat());
    for t in tables {
        for &(rad, res) in &t.weierstrass {
            csv.row(&[vec![fmt_f64(t.lambda)], nums(&t.s), nums(&[rad, res])].concat());
        }
    }
    csv
}

pub fn remainder_csv(tables: &[RaySweepTable], epsilon: f64) -> Csv {
    let d = tables.first().map_or(0, |t| t.s.len());
    let mut csv = Csv::new(&[vec!["lambda".to_string()], cols("s", d), vec!["r".into(), "profile".into()]].concat());
    for t in tables {
        for (r, v) in remainder_profile(t, epsilon) {
            csv.row(&[vec![fmt_f64(t.lambda)], nums(&t.s), nums(&[r, v])].concat());
        }
    }
    csv
}

/// Pipeline stage selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Bands,
    EdgeCheck,
    Dispersion,
    Support,
    Asymptote,
    Oracle,
    Validate,
}

impl Subcommand {
    pub const ALL: [Subcommand; 7] =
        [Self::Bands, Self::EdgeCheck, Self::Dispersion, Self::Support, Self::Asymptote, Self::Oracle, Self::Validate];

    pub fn name(self) -> &'static str {
        match self {
            Self::Bands => "bands",
            Self::EdgeCheck => "edge-check",
            Self::Dispersion => "dispersion",
            Self::Support => "support",
            Self::Asymptote => "asymptote",
            Self::Oracle => "oracle",
            Self::Validate => "validate",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

/// Result of one subcommand.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub ok: bool,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Runs one stage and writes its artifacts. `ok` is false when a
/// documented check of that stage fails.
pub fn run_subcommand(cmd: Subcommand, cfg: &RunConfig) -> Result<Outcome> {
    if cmd == Subcommand::Validate {
        let report = full_report(cfg)?;
        let failed: Vec<String> = report
            .acceptance
            .iter()
            .filter(|c| c.status == Status::Fail)
            .map(|c| c.criterion.clone())
            .chain(report.stages.iter().filter(|s| !s.ok).map(|s| format!("stage {}: {}", s.name, s.error.clone().unwrap_or_default())))
            .collect();
        let out = cfg.output_dir.clone();
        let summary = if failed.is_empty() {
            format!("{} checks passed", report.acceptance.len())
        } else {
            format!("failed: {}", failed.join("; "))
        };
        return Ok(Outcome { ok: failed.is_empty(), files: report.files.iter().map(|f| out.join(f)).collect(), summary });
    }
    let session = Session::new(cfg.clone())?;
    let out = session.output_dir()?;
    let d = session.op.dim();
    let save = |name: &str, csv: &Csv| -> Result<PathBuf> {
        let p = out.join(name);
        csv.write(&p)?;
        Ok(p)
    };
    let save_json = |name: &str, v: &dyn erased::Json| -> Result<PathBuf> {
        let p = out.join(name);
        std::fs::write(&p, v.to_json()?)?;
        Ok(p)
    };
    if cmd == Subcommand::Bands {
        let bands = session.bands()?;
        let gaps = find_gaps(&bands);
        let files = vec![save("bands.csv", &bands_csv(&bands))?, save_json("gaps.json", &GapsFile::new(&bands, &gaps))?];
        let summary = if gaps.is_empty() { "no finite gap".to_string() } else { format!("{} gap(s)", gaps.len()) };
        return Ok(Outcome { ok: true, files, summary });
    }
    let stage = session.edge()?;
    if cmd == Subcommand::EdgeCheck {
        let files = vec![save_json("edge.json", &EdgeFile::new(&stage))?];
        let a = &stage.edge.assumptions;
        return Ok(Outcome {
            ok: a.overall,
            files,
            summary: format!("edge {:.12} at k0 = {:?}, assumptions {}", stage.edge.edge_energy, stage.edge.k0, if a.overall { "pass" } else { "fail" }),
        });
    }
    let model = session.model(&stage)?;
    match cmd {
        Subcommand::Dispersion => {
            let dirs = session.cfg.sweep_directions.resolve(d)?;
            let ctl = StepControl::default();
            let csv = dispersion_csv(&model, &dirs, &ctl)?;
            let radius = concavity_radius(&model, &dirs, &ctl)?;
            Ok(Outcome { ok: true, files: vec![save("dispersion.csv", &csv)?], summary: format!("concavity radius {radius:.6}") })
        }
        Subcommand::Support => {
            let dirs = session.cfg.directions.resolve(d)?;
            let tol = session.support_tolerances();
            let mut records = Vec::new();
            for l in session.lambdas(&stage)? {
                records.extend(support_records(&model, l, &dirs, &tol)?);
            }
            let worst = records.iter().map(|r| r.level_residual.max(r.gauss_residual)).fold(0.0, f64::max);
            let limit = session.cfg.tolerances.tol_gauss;
            Ok(Outcome {
                ok: worst <= limit,
                files: vec![save("support.csv", &support_csv(&records))?],
                summary: format!("{} support points, worst residual {worst:.3e} (limit {limit:.1e})", records.len()),
            })
        }
        Subcommand::Asymptote => {
            let dirs = session.cfg.sweep_directions.resolve(d)?;
            let y = session.source_point()?;
            let tol = session.support_tolerances();
            let mut tables = Vec::new();
            for l in session.lambdas(&stage)? {
                for s in &dirs {
                    let sp = support_point(&model, l, s, &tol)?;
                    tables.push(asymptote_table(&session, &stage, &model, &sp, &y, &session.cfg.r_list)?);
                }
            }
            let mut files = vec![save("asymptote.csv", &asymptote_csv(&tables))?];
            if d == 2 {
                files.push(save("weierstrass.csv", &weierstrass_csv(&tables))?);
            }
            let mismatch = tables.iter().flat_map(|t| t.rows.iter().map(|r| r.form_mismatch())).fold(0.0, f64::max);
            Ok(Outcome { ok: mismatch <= 1e-8, files, summary: format!("{} tables, prefactor mismatch {mismatch:.3e}", tables.len()) })
        }
        Subcommand::Oracle => {
            let y = session.source_point()?;
            let mut tables = Vec::new();
            for l in session.lambdas(&stage)? {
                let ctx = SweepContext {
                    edge: &stage.edge,
                    model: &model,
                    lambda: l,
                    y: y.clone(),
                    oracle: session.oracle_options(&stage),
                    support: session.support_tolerances(),
                    exec: session.exec,
                };
                tables.extend(oracle_sweeps(&session, &ctx)?);
            }
            let fits: Vec<DirectionReport> = tables
                .iter()
                .map(|t| {
                    let f = fit_decay(t);
                    let sp = support_point(&model, t.lambda, &t.s, &session.support_tolerances())?;
                    Ok(DirectionReport { lambda: t.lambda, s: t.s.clone(), support: sp, fit_error: f.as_ref().err().map(|e| e.to_string()), fit: f.ok() })
                })
                .collect::<Result<_>>()?;
            let partial = tables.iter().filter(|t| t.partial).count();
            let files = vec![save("oracle.csv", &oracle_csv(&tables))?, save("fits.csv", &fits_csv(&fits))?, save("remainder.csv", &remainder_csv(&tables, session.cfg.asymptotics.epsilon))?, {
                let p = out.join("plot_sweeps.py");
                std::fs::write(&p, PLOT_SCRIPT)?;
                p
            }];
            Ok(Outcome { ok: partial == 0, files, summary: format!("{} sweeps, {partial} with unconverged values", tables.len()) })
        }
        Subcommand::Bands | Subcommand::EdgeCheck | Subcommand::Validate => unreachable!(),
    }
}

/// `gaps.json`.
#[derive(Serialize)]
struct GapsFile<'a> {
    schema_version: u32,
    cutoff: usize,
    resolution: usize,
    n_bands: usize,
    band_ranges: Vec<(f64, f64)>,
    gaps: &'a [SpectralGap],
    note: Option<&'static str>,
}

impl<'a> GapsFile<'a> {
    fn new(bands: &BandGrid, gaps: &'a [SpectralGap]) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            cutoff: bands.cutoff,
            resolution: bands.resolution,
            n_bands: bands.n_bands,
            band_ranges: (1..=bands.n_bands).map(|j| (bands.band_min(j), bands.band_max(j))).collect(),
            gaps,
            note: gaps.is_empty().then_some("no finite gap"),
        }
    }
}

/// `edge.json`.
#[derive(Serialize)]
struct EdgeFile<'a> {
    schema_version: u32,
    #[serde(flatten)]
    stage: &'a EdgeStage,
}

impl<'a> EdgeFile<'a> {
    fn new(stage: &'a EdgeStage) -> Self {
        Self { schema_version: SCHEMA_VERSION, stage }
    }
}

mod erased {
    use crate::error::{Error, Result};

    pub trait Json {
        fn to_json(&self) -> Result<String>;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_json(&self) -> Result<String> {
            serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
        }
    }
}

/// Largest relative change of the leading term under rescaling of both
/// Bloch vectors.
pub fn gauge_check(stage: &EdgeStage, model: &BandDispersion<'_>, sp: &SupportPoint, y: &[f64]) -> Result<f64> {
    let pair = bloch_pair(model, &sp.beta_s)?;
    let x: Vec<f64> = y.iter().zip(&sp.s).map(|(a, b)| a + 10.0 * b).collect();
    let base = leading_term(&LeadingTermInputs { edge: &stage.edge, sp, pair: &pair, x: x.clone(), y: y.to_vec() })?;
    let mut worst = 0.0f64;
    for j in 0..20 {
        let a = C64::from_polar(0.5 + 0.13 * j as f64, 0.7 * j as f64);
        let b = C64::from_polar(2.0 - 0.07 * j as f64, -1.3 * j as f64);
        let mut p = pair.clone();
        p.phi_plus.iter_mut().for_each(|c| *c *= a);
        p.phi_minus.iter_mut().for_each(|c| *c *= b);
        p.pairing = crate::linalg::dotc(&p.phi_minus, &p.phi_plus);
        let v = leading_term(&LeadingTermInputs { edge: &stage.edge, sp, pair: &p, x: x.clone(), y: y.to_vec() })?;
        worst = worst.max((v - base).norm() / base.norm());
    }
    Ok(worst)
}

pub fn fits_csv(dirs: &[DirectionReport]) -> Csv {
    let d = dirs.first().map_or(0, |t| t.s.len());
    let mut csv = Csv::new(
        &[
            vec!["lambda".to_string()],
            cols("s", d),
            vec![
                "h".into(),
                "exp_rate".into(),
                "alg_exponent".into(),
                "r_squared".into(),
                "window_lo".into(),
                "window_hi".into(),
                "n_rows".into(),
            ],
        ]
        .concat(),
    );
    for t in dirs {
        let f = t.fit.as_ref();
        let v = |g: fn(&FitResult) -> f64| f.map_or(f64::NAN, g);
        csv.row(
            &[
                vec![fmt_f64(t.lambda)],
                nums(&t.s),
                nums(&[t.support.h, v(|f| f.exp_rate), v(|f| f.alg_exponent), v(|f| f.r_squared), v(|f| f.window.0), v(|f| f.window.1)]),
                vec![f.map_or(0, |f| f.n_rows).to_string()],
            ]
            .concat(),
        );
    }
    csv
}

/// Renders `oracle.csv` with matplotlib; written next to the data.
pub const PLOT_SCRIPT: &str = r##"import csv
import math
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "oracle.csv"
rows = [r for r in csv.DictReader(line for line in open(path) if not line.startswith("#"))]
groups = {}
for r in rows:
    key = tuple(v for k, v in r.items() if k.startswith("s"))
    groups.setdefault(key, []).append(r)
fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
for key, rs in groups.items():
    r = [float(x["r"]) for x in rs]
    g = [math.hypot(float(x["re_oracle"]), float(x["im_oracle"])) for x in rs]
    ratio = [float(x["abs_ratio"]) for x in rs]
    label = "s=(" + ", ".join(f"{float(v):.3f}" for v in key) + ")"
    ax1.semilogy(r, g, "o-", label=label)
    ax2.plot(r, ratio, "o-", label=label)
ax1.set_xlabel("r")
ax1.set_ylabel("|G|")
ax2.set_xlabel("r")
ax2.set_ylabel("|G| / |leading term|")
ax2.axhline(1.0, color="k", lw=0.5)
ax1.legend(fontsize=6)
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150)
"##;
