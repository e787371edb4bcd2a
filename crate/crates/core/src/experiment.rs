//! Experiment configuration, artifact layout and the workflows behind the
//! command-line subcommands.
//!
//! Every command reads one [`ExperimentConfig`] and writes into an output
//! directory that also holds a [`RunManifest`] with checksums of the
//! configuration, meshes, flow fields and every written file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contour::{isolines_csv, GridField};
use crate::error::{Error, Result};
use crate::geometry::{build_geometry, BoundaryTag, GeometryConfig};
use crate::identification::{
    admissible_threshold, effective_time, evaluate_curves, grid_points, multistage_identify_each,
    score, sobol_sample, AdmissibleSet, BreakthroughModel, CachedModel, FeasibleBox, Measurement,
    ResidualSurface, StagePlan, StageResult, Strategy, TransportModel, DEFAULT_GAMMA,
};
use crate::mesh::{read_mesh, Mesh, RefinementLadder};
use crate::par::Execution;
use crate::stokes::{line_difference, sample_along_line, solve_stokes, FlowBcs, FlowField};
use crate::transport::{
    assemble_transport, run_transport, scalar_field_text, sensitivity_sweep, Isotherm, RunOptions,
    SweepAxis, TransportParams, TransportSolver,
};

pub const MANIFEST_FILE: &str = "manifest.json";
/// Number of samples along the channel midline.
pub const MIDLINE_SAMPLES: usize = 1001;
/// Seed offset between stages when each stage draws fresh noise.
pub const STAGE_SEED_STRIDE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSettings {
    pub h_target: f64,
    /// Uniform refinements after the initial triangulation.
    pub refinements: usize,
    /// Ladder level used by transport and identification.
    pub working_level: usize,
}

impl Default for MeshSettings {
    fn default() -> Self {
        Self {
            h_target: 0.06,
            refinements: 2,
            working_level: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sensitivity {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportSettings {
    pub pe: f64,
    pub isotherm: Isotherm,
    pub tau: f64,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
    pub mass_balance: bool,
    pub sensitivity: Option<Sensitivity>,
}

impl Default for TransportSettings {
    fn default() -> Self {
        let p = TransportParams::default();
        Self {
            pe: p.pe,
            isotherm: p.isotherm,
            tau: p.tau,
            t_end: p.t_end,
            snapshot_times: Vec::new(),
            mass_balance: false,
            sensitivity: None,
        }
    }
}

impl TransportSettings {
    pub fn params(&self) -> TransportParams {
        TransportParams {
            pe: self.pe,
            isotherm: self.isotherm,
            tau: self.tau,
            t_end: self.t_end,
        }
    }
}

/// Whether all stages of a plan score against one noise realization or
/// each stage draws its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementReuse {
    #[default]
    Shared,
    PerStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentificationSettings {
    /// Feasible parameter box.
    #[serde(rename = "box")]
    pub feasible: FeasibleBox,
    pub strategy: Strategy,
    pub gamma: f64,
    /// Noise amplitudes; each gets its own outputs.
    pub deltas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Multistage plan; replaces `strategy` when present.
    pub plan: Option<StagePlan>,
    pub t_cut: Option<f64>,
    /// Measured `t,c_tilde` CSV used instead of synthesized data.
    pub measurement: Option<PathBuf>,
    pub measurement_reuse: MeasurementReuse,
    /// Number of `sqrt J` isolines exported for grid sweeps.
    pub isolines: usize,
    /// Spacing of the isoline levels in `sqrt J`.
    pub isoline_step: f64,
}

impl Default for IdentificationSettings {
    fn default() -> Self {
        Self {
            feasible: FeasibleBox::default(),
            strategy: Strategy::Grid { n1: 51, n2: 51 },
            gamma: DEFAULT_GAMMA,
            deltas: vec![0.01, 0.05],
            seeds: vec![0],
            plan: None,
            t_cut: None,
            measurement: None,
            measurement_reuse: MeasurementReuse::Shared,
            isolines: 10,
            isoline_step: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub mesh: MeshSettings,
    pub flow: FlowBcs,
    pub transport: TransportSettings,
    pub identification: IdentificationSettings,
    pub output_dir: PathBuf,
    /// Maximum number of concurrent evaluations.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            mesh: MeshSettings::default(),
            flow: FlowBcs::default(),
            transport: TransportSettings::default(),
            identification: IdentificationSettings::default(),
            output_dir: PathBuf::from("poreflow-out"),
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hash of the result-determining settings; `workers` and
    /// `output_dir` are excluded.
    pub fn checksum(&self) -> String {
        let mut c = self.clone();
        c.workers = 1;
        c.output_dir = PathBuf::new();
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    pub fn execution(&self) -> Execution {
        Execution::with_workers(self.workers)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        self.geometry.validate()?;
        let m = &self.mesh;
        if !(m.h_target.is_finite() && m.h_target > 0.0) {
            return cfg(format!("mesh.h_target must be positive, got {}", m.h_target));
        }
        if m.working_level > m.refinements {
            return cfg(format!(
                "mesh.working_level {} exceeds refinements {}",
                m.working_level, m.refinements
            ));
        }
        if !(self.flow.inlet_normal_speed > 0.0) {
            return cfg("flow.inlet_normal_speed must be positive".into());
        }
        let t = &self.transport;
        t.params().validate()?;
        if let Some(s) = t.snapshot_times.iter().find(|&&s| !(0.0..=t.t_end).contains(&s)) {
            return cfg(format!("snapshot time {s} outside [0, {}]", t.t_end));
        }
        if let Some(s) = &t.sensitivity {
            if s.values.is_empty() {
                return cfg("transport.sensitivity.values is empty".into());
            }
            for &v in &s.values {
                s.axis.apply(&t.params(), v)?;
            }
        }
        let id = &self.identification;
        id.feasible.validate()?;
        if !(id.gamma.is_finite() && id.gamma > 1.0) {
            return cfg(format!("identification.gamma must exceed 1, got {}", id.gamma));
        }
        if id.deltas.is_empty() || id.deltas.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return cfg("identification.deltas must be a nonempty list of values >= 0".into());
        }
        if !(id.isoline_step.is_finite() && id.isoline_step > 0.0) {
            return cfg("identification.isoline_step must be positive".into());
        }
        if id.seeds.is_empty() {
            return cfg("identification.seeds is empty".into());
        }
        match id.strategy {
            Strategy::Grid { n1, n2 } if n1 < 2 || n2 < 2 => {
                return cfg("grid strategy needs at least 2x2 nodes".into())
            }
            Strategy::Sobol { samples: 0 } => return cfg("sobol strategy needs samples > 0".into()),
            _ => {}
        }
        if let Some(plan) = &id.plan {
            plan.validate(t.t_end)?;
        }
        if let Some(tc) = id.t_cut {
            if !(tc > 0.0 && tc <= t.t_end) {
                return cfg(format!("identification.t_cut {tc} outside (0, {}]", t.t_end));
            }
        }
        if id.measurement.is_some() {
            if id.deltas.len() != 1 {
                return cfg("an imported measurement needs exactly one delta".into());
            }
            if id.measurement_reuse == MeasurementReuse::PerStage {
                return cfg("per-stage noise needs synthesized measurements".into());
            }
        }
        if self.workers == 0 {
            return cfg("workers must be at least 1".into());
        }
        Ok(())
    }

    /// Hash of the settings that determine the mesh ladder.
    pub fn mesh_key(&self) -> String {
        let v = serde_json::json!({ "geometry": self.geometry, "mesh": self.mesh });
        sha256_hex(v.to_string().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Checksums and timings of everything a run produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunManifest {
    pub config_checksum: String,
    pub mesh_key: String,
    pub mesh_checksums: Vec<String>,
    /// Per level: hash of mesh checksum and flow boundary data.
    pub flow_keys: BTreeMap<usize, String>,
    pub flow_checksums: BTreeMap<usize, String>,
    /// File name relative to the output directory -> SHA-256 of contents.
    pub artifacts: BTreeMap<String, String>,
    /// Wall-clock seconds of the last run of each command.
    pub timings: BTreeMap<String, f64>,
    /// Cache outcome per cached computation (`hit` or `miss`).
    pub cache: BTreeMap<String, String>,
}

impl RunManifest {
    /// Names of listed files that are missing or whose contents changed.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|(name, sum)| match std::fs::read(dir.join(name)) {
                Ok(bytes) => sha256_hex(&bytes) != **sum,
                Err(_) => true,
            })
            .map(|(name, _)| name.clone())
            .collect()
    }
}

/// Output directory plus its manifest; all files go through [`Workspace::write`].
#[derive(Debug)]
pub struct Workspace {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl Workspace {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(MANIFEST_FILE);
        let manifest = if path.exists() {
            serde_json::from_str(&std::fs::read_to_string(&path)?)?
        } else {
            RunManifest::default()
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.path(name), contents)?;
        self.manifest
            .artifacts
            .insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    /// Unchanged listed file on disk.
    fn is_current(&self, name: &str) -> bool {
        match (self.manifest.artifacts.get(name), std::fs::read(self.path(name))) {
            (Some(sum), Ok(bytes)) => sha256_hex(&bytes) == *sum,
            _ => false,
        }
    }

    pub fn save(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(self.path(MANIFEST_FILE), text)?;
        Ok(())
    }
}

pub fn mesh_file(level: usize) -> String {
    format!("mesh_level{level}.txt")
}

pub fn flow_file(level: usize) -> String {
    format!("flow_level{level}.txt")
}

pub fn midline_file(level: usize) -> String {
    format!("midline_level{level}.csv")
}

/// Compact decimal rendering of a parameter value for file names.
pub fn value_label(v: f64) -> String {
    format!("{v}")
}

fn realization_label(delta: f64, seed: Option<u64>) -> String {
    match seed {
        Some(s) => format!("delta{}_seed{s}", value_label(delta)),
        None => format!("delta{}_measured", value_label(delta)),
    }
}

/// Human-readable lines describing what a command did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub lines: Vec<String>,
}

impl Report {
    fn note(&mut self, line: impl Into<String>) {
        let line = line.into();
        info!("{line}");
        self.lines.push(line);
    }
}

fn flow_key(mesh: &Mesh, bcs: &FlowBcs) -> String {
    let v = serde_json::json!({ "mesh": mesh.checksum(), "bcs": bcs });
    sha256_hex(v.to_string().as_bytes())
}

fn finish(ws: &mut Workspace, cfg: &ExperimentConfig, command: &str, start: Instant) -> Result<()> {
    ws.manifest.config_checksum = cfg.checksum();
    ws.manifest
        .timings
        .insert(command.to_string(), start.elapsed().as_secs_f64());
    ws.save()
}

/// Build the mesh ladder and write one mesh file per level.
pub fn cmd_mesh(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let start = Instant::now();
    let mut ws = Workspace::open(&cfg.output_dir)?;
    let mut report = Report::default();
    let domain = build_geometry(&cfg.geometry)?;
    let ladder = RefinementLadder::build(&domain, cfg.mesh.h_target, cfg.mesh.refinements)?;
    let checksums: Vec<String> = ladder.meshes.iter().map(Mesh::checksum).collect();
    let unchanged = checksums == ws.manifest.mesh_checksums
        && (0..checksums.len()).all(|k| ws.is_current(&mesh_file(k)));
    let mut levels = Vec::new();
    for (k, mesh) in ladder.meshes.iter().enumerate() {
        let q = mesh.quality();
        if !unchanged {
            ws.write(&mesh_file(k), &mesh.to_text())?;
        }
        report.note(format!(
            "level {k}: {} vertices, {} triangles, min angle {:.2} deg, max edge {:.4}",
            q.vertices, q.triangles, q.min_angle_deg, q.max_edge
        ));
        levels.push(serde_json::json!({
            "level": k,
            "file": mesh_file(k),
            "vertices": q.vertices,
            "triangles": q.triangles,
            "min_angle_deg": q.min_angle_deg,
            "max_edge": q.max_edge,
            "area": q.area,
            "checksum": checksums[k],
        }));
    }
    ws.write_json(
        "mesh_report.json",
        &serde_json::json!({
            "h_target": cfg.mesh.h_target,
            "fluid_area": cfg.geometry.fluid_area(),
            "levels": levels,
        }),
    )?;
    if unchanged {
        report.note("mesh ladder unchanged; files kept");
    } else {
        // New meshes invalidate every flow field.
        ws.manifest.flow_keys.clear();
        ws.manifest.flow_checksums.clear();
    }
    ws.manifest.mesh_checksums = checksums;
    ws.manifest.mesh_key = cfg.mesh_key();
    finish(&mut ws, cfg, "mesh", start)?;
    Ok(report)
}

fn load_mesh(ws: &Workspace, cfg: &ExperimentConfig, level: usize) -> Result<Mesh> {
    let name = mesh_file(level);
    let path = ws.path(&name);
    if !path.exists() || ws.manifest.mesh_key != cfg.mesh_key() {
        return Err(Error::MissingArtifact {
            path: path.display().to_string(),
            command: "poreflow mesh".into(),
        });
    }
    read_mesh(&path)
}

/// Flow field of the working level, solved earlier by [`cmd_flow`].
pub fn load_flow(ws: &Workspace, cfg: &ExperimentConfig) -> Result<(Mesh, FlowField)> {
    let level = cfg.mesh.working_level;
    let mesh = load_mesh(ws, cfg, level)?;
    let name = flow_file(level);
    let path = ws.path(&name);
    let current = ws.manifest.flow_keys.get(&level) == Some(&flow_key(&mesh, &cfg.flow));
    if !path.exists() || !current {
        return Err(Error::MissingArtifact {
            path: path.display().to_string(),
            command: "poreflow flow".into(),
        });
    }
    let flow = FlowField::from_text(&std::fs::read_to_string(&path)?, &mesh)?;
    Ok((mesh, flow))
}

fn midline_csv(mesh: &Mesh, flow: &FlowField, x2: f64) -> (String, Vec<crate::stokes::LineSample>) {
    let samples = sample_along_line(mesh, flow, x2, MIDLINE_SAMPLES);
    let mut s = String::from("x1,u1,u2,p\n");
    for p in &samples {
        if let (Some(u1), Some(u2), Some(pr)) = (p.u1, p.u2, p.p) {
            let _ = writeln!(s, "{:.16e},{u1:.16e},{u2:.16e},{pr:.16e}", p.x1);
        }
    }
    (s, samples)
}

/// Solve Stokes on every ladder level (reusing cached fields) and write the
/// fields, midline profiles and the ladder convergence table.
pub fn cmd_flow(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let start = Instant::now();
    let mut ws = Workspace::open(&cfg.output_dir)?;
    let mut report = Report::default();
    let x2 = 0.5 * cfg.geometry.height;
    let mut profiles = Vec::new();
    let mut table = String::from("coarse_level,fine_level,midline_difference\n");
    for level in 0..=cfg.mesh.refinements {
        let mesh = load_mesh(&ws, cfg, level)?;
        let key = flow_key(&mesh, &cfg.flow);
        let name = flow_file(level);
        let hit = ws.manifest.flow_keys.get(&level) == Some(&key)
            && ws.is_current(&name)
            && ws.is_current(&midline_file(level));
        let flow = if hit {
            FlowField::from_text(&std::fs::read_to_string(ws.path(&name))?, &mesh)?
        } else {
            let t = Instant::now();
            let flow = solve_stokes(&mesh, &cfg.flow)?;
            report.note(format!(
                "level {level}: solved in {:.2} s, residual {:.2e}",
                t.elapsed().as_secs_f64(),
                flow.solver_residual
            ));
            ws.write(&name, &flow.to_text())?;
            ws.manifest.flow_keys.insert(level, key);
            ws.manifest.flow_checksums.insert(level, flow.checksum());
            flow
        };
        ws.manifest
            .cache
            .insert(format!("flow_level{level}"), if hit { "hit" } else { "miss" }.into());
        let net = flow.flux_through(&mesh, BoundaryTag::Inlet) + flow.flux_through(&mesh, BoundaryTag::Outlet);
        report.note(format!(
            "level {level}: {} (net boundary flux {net:.2e})",
            if hit { "cached" } else { "computed" }
        ));
        let (csv, samples) = midline_csv(&mesh, &flow, x2);
        if !hit {
            ws.write(&midline_file(level), &csv)?;
        }
        profiles.push(samples);
    }
    for k in 1..profiles.len() {
        let d = line_difference(&profiles[k - 1], &profiles[k]);
        let _ = writeln!(table, "{},{},{d:.16e}", k - 1, k);
        report.note(format!("midline difference level {} vs {k}: {d:.3e}", k - 1));
    }
    ws.write("flow_convergence.csv", &table)?;
    finish(&mut ws, cfg, "flow", start)?;
    Ok(report)
}

/// Breakthrough curve, snapshots, mass balance and sensitivity curves on
/// the working level.
pub fn cmd_transport(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let start = Instant::now();
    let mut ws = Workspace::open(&cfg.output_dir)?;
    let mut report = Report::default();
    let (mesh, flow) = load_flow(&ws, cfg)?;
    let t = &cfg.transport;
    let params = t.params();
    let opts = RunOptions {
        snapshot_times: t.snapshot_times.clone(),
        mass_balance: t.mass_balance,
        ..RunOptions::default()
    };
    let run = run_transport(&mesh, &flow, &params, &opts)?;
    ws.write("breakthrough.csv", &run.curve.to_csv())?;
    report.note(format!(
        "breakthrough: {} steps, c_out(T) = {:.6}",
        run.curve.len(),
        run.curve.values.last().copied().unwrap_or(0.0)
    ));
    let checksum = mesh.checksum();
    for snap in &run.snapshots {
        let name = format!("snapshot_t{}.txt", value_label(snap.requested));
        ws.write(&name, &scalar_field_text(&checksum, snap.t, &snap.c))?;
    }
    if let Some(balance) = &run.balance {
        ws.write("mass_balance.csv", &balance.to_csv())?;
        report.note(format!("mass balance: max residual rate {:.3e}", balance.max_residual_rate()));
    }
    if let Some(s) = &t.sensitivity {
        let curves = sensitivity_sweep(&mesh, &flow, &params, s.axis, &s.values, cfg.execution())?;
        for (v, curve) in s.values.iter().zip(&curves) {
            let name = format!("breakthrough_{}_{}.csv", s.axis.as_str(), value_label(*v));
            ws.write(&name, &curve.to_csv())?;
        }
        report.note(format!("sensitivity: {} curves over {}", curves.len(), s.axis.as_str()));
    }
    finish(&mut ws, cfg, "transport", start)?;
    Ok(report)
}

fn transport_model(mesh: &Mesh, flow: &FlowField, cfg: &ExperimentConfig) -> Result<CachedModel<TransportModel>> {
    let params = cfg.transport.params();
    let solver = TransportSolver::new(assemble_transport(mesh, flow, params.pe)?, params.tau)?;
    Ok(CachedModel::new(TransportModel {
        solver,
        isotherm: params.isotherm,
        n_steps: params.n_steps()?,
    }))
}

/// Synthesized measurements for every `(delta, seed)` pair, delta-major.
fn synthesize_all<M: BreakthroughModel>(model: &M, cfg: &ExperimentConfig) -> Result<Vec<Measurement>> {
    let iso = cfg.transport.isotherm;
    let exact = model.breakthrough(iso.da_a(), iso.da_d())?;
    let id = &cfg.identification;
    let mut out = Vec::new();
    for &delta in &id.deltas {
        for &seed in &id.seeds {
            out.push(Measurement::synthesize(&exact, delta, seed)?);
        }
    }
    Ok(out)
}

/// Write noisy measurements at the configured generator.
pub fn cmd_synthesize(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let start = Instant::now();
    let mut ws = Workspace::open(&cfg.output_dir)?;
    let mut report = Report::default();
    let (mesh, flow) = load_flow(&ws, cfg)?;
    let model = transport_model(&mesh, &flow, cfg)?;
    for meas in synthesize_all(&model, cfg)? {
        let name = format!("measurement_{}.csv", realization_label(meas.delta, meas.seed));
        ws.write(&name, &meas.to_csv())?;
        report.note(format!("wrote {name}"));
    }
    finish(&mut ws, cfg, "synthesize", start)?;
    Ok(report)
}

fn box_json(b: &FeasibleBox) -> serde_json::Value {
    serde_json::json!({ "da_a": b.da_a, "da_d": b.da_d, "area": b.area() })
}

fn set_summary(set: &AdmissibleSet) -> serde_json::Value {
    let mut v = set.minimizer_json();
    v["bounding_box"] = set.bounding_box().map_or(serde_json::Value::Null, |b| box_json(&b));
    v
}

fn stage_json(k: usize, r: &StageResult) -> serde_json::Value {
    serde_json::json!({
        "stage": k,
        "box": box_json(&r.bx),
        "t_cut": r.t_cut,
        "result": set_summary(&r.set),
    })
}

/// Residual sweeps, admissible sets and minimizers per measurement, plus a
/// cross-realization summary per noise level.
pub fn cmd_identify(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let start = Instant::now();
    let mut ws = Workspace::open(&cfg.output_dir)?;
    let mut report = Report::default();
    let (mesh, flow) = load_flow(&ws, cfg)?;
    let model = transport_model(&mesh, &flow, cfg)?;
    let id = &cfg.identification;
    let exec = cfg.execution();
    let tau = cfg.transport.tau;

    let measurements = match &id.measurement {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|_| Error::MissingArtifact {
                path: path.display().to_string(),
                command: "poreflow synthesize".into(),
            })?;
            let meas = Measurement::from_csv(&text, tau, id.deltas[0])?;
            if meas.values.len() != cfg.transport.params().n_steps()? {
                return Err(Error::GridMismatch(format!(
                    "measurement has {} samples, the time grid has {}",
                    meas.values.len(),
                    cfg.transport.params().n_steps()?
                )));
            }
            vec![meas]
        }
        None => synthesize_all(&model, cfg)?,
    };
    let single = measurements.len() == 1;

    if let Some(plan) = &id.plan {
        let mut failures = 0usize;
        for meas in &measurements {
            let label = realization_label(meas.delta, meas.seed);
            let per_stage: Vec<Measurement> = match (id.measurement_reuse, meas.seed) {
                (MeasurementReuse::PerStage, Some(seed)) => {
                    let iso = cfg.transport.isotherm;
                    let exact = model.breakthrough(iso.da_a(), iso.da_d())?;
                    (0..plan.stages.len() as u64)
                        .map(|k| Measurement::synthesize(&exact, meas.delta, seed.wrapping_add(k * STAGE_SEED_STRIDE)))
                        .collect::<Result<_>>()?
                }
                _ => vec![meas.clone()],
            };
            match multistage_identify_each(&model, plan, &id.feasible, &per_stage, id.gamma, exec) {
                Ok(stages) => {
                    for (k, r) in stages.iter().enumerate() {
                        ws.write(&format!("stage{k}_admissible_{label}.csv"), &r.set.to_csv())?;
                    }
                    let last = &stages.last().expect("nonempty plan").set;
                    ws.write_json(&format!("minimizer_{label}.json"), &last.minimizer_json())?;
                    let rows: Vec<_> = stages.iter().enumerate().map(|(k, r)| stage_json(k, r)).collect();
                    ws.write_json(&format!("stages_{label}.json"), &serde_json::json!({ "stages": rows }))?;
                    report.note(format!(
                        "{label}: {} stages, final minimizer ({:.6}, {:.6})",
                        stages.len(),
                        last.best().da_a,
                        last.best().da_d
                    ));
                }
                Err(e @ Error::EmptyAdmissible { .. }) if !single => {
                    failures += 1;
                    report.note(format!("{label}: {e}"));
                    ws.write_json(
                        &format!("stages_{label}.json"),
                        &serde_json::json!({ "error": e.to_string() }),
                    )?;
                }
                Err(e) => return Err(e),
            }
        }
        if failures > 0 {
            report.note(format!("{failures} of {} realizations ended with an empty set", measurements.len()));
        }
        report.note(format!("{} distinct parameter points simulated", model.len()));
        finish(&mut ws, cfg, "identify", start)?;
        return Ok(report);
    }

    let params = match id.strategy {
        Strategy::Grid { n1, n2 } => grid_points(&id.feasible, n1, n2),
        Strategy::Sobol { samples } => sobol_sample(&id.feasible, samples),
    };
    let curves = evaluate_curves(&model, &params, exec)?;
    report.note(format!("evaluated {} parameter points", params.len()));
    let mut per_delta: BTreeMap<u64, (f64, Vec<(Option<u64>, AdmissibleSet)>)> = BTreeMap::new();
    for meas in &measurements {
        let label = realization_label(meas.delta, meas.seed);
        let points = score(&params, &curves, meas, id.t_cut)?;
        let thr = admissible_threshold(id.gamma, meas.delta, effective_time(meas, id.t_cut));
        let set = AdmissibleSet::new(points, thr, id.gamma);
        if let Strategy::Grid { n1, n2 } = id.strategy {
            let surface = ResidualSurface {
                bx: id.feasible,
                n1,
                n2,
                points: set.points.clone(),
            };
            ws.write(&format!("surface_{label}.csv"), &surface.to_csv())?;
            let (x, y) = surface.axes();
            let z = surface.sqrt_j();
            let levels = isoline_levels(thr, id.isoline_step, id.isolines);
            let levels_csv = isolines_csv(&GridField { x: &x, y: &y, z: &z }, &levels);
            ws.write(&format!("isolines_{label}.csv"), &levels_csv)?;
        }
        ws.write(&format!("admissible_{label}.csv"), &set.to_csv())?;
        ws.write_json(&format!("minimizer_{label}.json"), &set.minimizer_json())?;
        let b = set.best();
        report.note(format!(
            "{label}: minimizer ({:.6}, {:.6}), sqrt J {:.4e}, {} admissible of {}",
            b.da_a,
            b.da_d,
            b.j.sqrt(),
            set.admissible.len(),
            set.points.len()
        ));
        per_delta
            .entry(meas.delta.to_bits())
            .or_insert_with(|| (meas.delta, Vec::new()))
            .1
            .push((meas.seed, set));
    }
    if single {
        let set = &per_delta.values().next().expect("one measurement").1[0].1;
        if set.is_empty() {
            finish(&mut ws, cfg, "identify", start)?;
            return Err(Error::EmptyAdmissible {
                stage: 0,
                threshold: set.threshold,
                best: set.best().j,
            });
        }
    }
    for (delta, sets) in per_delta.values() {
        if sets.len() < 2 {
            continue;
        }
        let intersection: Vec<usize> = (0..params.len())
            .filter(|&k| sets.iter().all(|(_, s)| s.is_admissible(k)))
            .collect();
        let bbox = FeasibleBox::bounding(intersection.iter().map(|&k| params[k]));
        let rows: Vec<_> = sets
            .iter()
            .map(|(seed, s)| {
                let mut v = set_summary(s);
                v["seed"] = serde_json::json!(seed);
                v
            })
            .collect();
        ws.write_json(
            &format!("realizations_delta{}.json", value_label(*delta)),
            &serde_json::json!({
                "delta": delta,
                "realizations": rows,
                "intersection_count": intersection.len(),
                "intersection_is_empty": intersection.is_empty(),
                "intersection_bounding_box": bbox.map_or(serde_json::Value::Null, |b| box_json(&b)),
            }),
        )?;
        report.note(format!(
            "delta {delta}: {} realizations, {} points admissible in all",
            sets.len(),
            intersection.len()
        ));
    }
    finish(&mut ws, cfg, "identify", start)?;
    Ok(report)
}

/// `sqrt J` levels `sqrt(threshold) + k step`; for exact data (zero
/// threshold) the trivial level 0 is skipped.
pub fn isoline_levels(threshold: f64, step: f64, count: usize) -> Vec<f64> {
    let first = if threshold > 0.0 { 0 } else { 1 };
    (first..first + count)
        .map(|k| threshold.sqrt() + k as f64 * step)
        .collect()
}
