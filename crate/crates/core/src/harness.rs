//! Experiment configuration, the benchmark pipelines and result persistence.
//!
//! A run is described by a flat [`ExperimentConfig`]; [`run_stokes`],
//! [`run_component`], [`run_sweep`] and [`run_spectrum`] turn it into
//! [`ResultRecord`]s or spectrum files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::discretization::{assemble_velocity_lumped_mass, Backend, StokesSystem};
use crate::error::{Error, Result};
use crate::krylov::{gmres, GmresConfig, NullSpace, SolveReport, SolveStatus};
use crate::mesh::StructuredMesh;
use crate::sparse::LinearOperator;
use crate::multigrid::{MultigridConfig, MultigridHierarchy, ProblemKind};
use crate::schur::{
    InnerMode, PoissonInverse, SchurApproximation, SchurConfig, SchurKind, SchurSign, StokesPreconditioner, ViscousInverse,
};
use crate::spectrum::{check_dense_budget, preconditioned_spectrum, schur_spectrum, system_schur, SpectrumLabel, SpectrumReport};
use crate::viscosity::{QuadratureField, SinkerConfig, DEFAULT_BETA, DEFAULT_DELTA, DEFAULT_OMEGA, DEFAULT_SEED};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::InvalidConfig(format!("unknown output format `{s}`"))),
        }
    }
}

/// Flat description of one benchmark run. Every field has a default, so a
/// config file lists only what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub order: usize,
    pub level: u32,
    pub sinkers: usize,
    pub seed: u64,
    pub dynamic_ratio: f64,
    pub delta: f64,
    pub omega: f64,
    pub beta: f64,
    pub schur: SchurKind,
    pub amp_left: f64,
    pub amp_right: f64,
    pub inner_vcycles: usize,
    pub inner_mode: InnerMode,
    pub schur_sign: SchurSign,
    pub rtol: f64,
    pub restart: usize,
    pub max_iters: usize,
    pub smoother_sweeps: usize,
    pub cheb_lo_fraction: f64,
    pub cheb_safety: f64,
    pub power_iterations: usize,
    pub coarse_level: u32,
    pub backend: Backend,
    /// Also solve the viscous and pressure Poisson components in `bench`.
    pub components: bool,
    /// Record wall times; off gives byte-identical output across reruns.
    pub timing: bool,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let g = GmresConfig::default();
        let mg = MultigridConfig::default();
        let s = SchurConfig::default();
        Self {
            dim: 3,
            order: 2,
            level: 4,
            sinkers: 16,
            seed: DEFAULT_SEED,
            dynamic_ratio: 1e6,
            delta: DEFAULT_DELTA,
            omega: DEFAULT_OMEGA,
            beta: DEFAULT_BETA,
            schur: s.kind,
            amp_left: s.amp_left,
            amp_right: s.amp_right,
            inner_vcycles: s.inner_vcycles,
            inner_mode: s.inner_mode,
            schur_sign: s.sign,
            rtol: g.rtol,
            restart: g.restart,
            max_iters: g.max_iters,
            smoother_sweeps: mg.smoother_sweeps,
            cheb_lo_fraction: mg.cheb_lo_fraction,
            cheb_safety: mg.cheb_safety,
            power_iterations: mg.power_iterations,
            coarse_level: mg.coarse_level,
            backend: mg.backend,
            components: false,
            timing: true,
            output: None,
            format: OutputFormat::Csv,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Sets one field from its textual value, as a config line or CLI flag would.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| Error::InvalidConfig(format!("{key}: {e}"));
        let mut table = match toml::Value::try_from(&*self).map_err(|e| bad(&e))? {
            toml::Value::Table(t) => t,
            _ => unreachable!("a struct serializes to a table"),
        };
        let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").unwrap_or(toml::Value::String(value.into())),
            Err(_) => toml::Value::String(value.into()),
        };
        // integers are accepted where floats are expected
        let parsed = match (table.get(key), parsed) {
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert(key.to_string(), parsed);
        *self = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| bad(&e))?;
        Ok(())
    }

    pub fn sinker_config(&self) -> Result<SinkerConfig> {
        let mut s = SinkerConfig::random(self.dim, self.sinkers, self.seed, self.dynamic_ratio)?;
        s.delta = self.delta;
        s.omega = self.omega;
        s.beta = self.beta;
        s.validate()?;
        Ok(s)
    }

    pub fn schur_config(&self) -> SchurConfig {
        SchurConfig {
            kind: self.schur,
            amp_left: self.amp_left,
            amp_right: self.amp_right,
            inner_vcycles: self.inner_vcycles,
            inner_mode: self.inner_mode,
            sign: self.schur_sign,
        }
    }

    pub fn multigrid_config(&self) -> MultigridConfig {
        MultigridConfig {
            smoother_sweeps: self.smoother_sweeps,
            cheb_lo_fraction: self.cheb_lo_fraction,
            cheb_safety: self.cheb_safety,
            power_iterations: self.power_iterations,
            coarse_level: self.coarse_level,
            backend: self.backend,
        }
    }

    pub fn gmres_config(&self, null_space: Option<NullSpace>) -> GmresConfig {
        GmresConfig { rtol: self.rtol, restart: self.restart, max_iters: self.max_iters, null_space }
    }

    pub fn mesh(&self) -> Result<StructuredMesh> {
        StructuredMesh::new(self.dim, self.level)
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh()?;
        if self.order < 2 {
            return Err(Error::InvalidConfig(format!("order {} must be at least 2", self.order)));
        }
        self.sinker_config()?;
        self.schur_config().validate()?;
        self.multigrid_config().validate()?;
        self.gmres_config(None).validate()?;
        if self.coarse_level > self.level {
            return Err(Error::InvalidConfig(format!(
                "coarse level {} above the mesh level {}",
                self.coarse_level, self.level
            )));
        }
        Ok(())
    }
}

/// Which problem a run solves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Stokes,
    Viscous,
    PoissonRight,
}

impl std::str::FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "stokes" => Ok(Self::Stokes),
            "viscous" => Ok(Self::Viscous),
            "poisson_right" | "poisson" => Ok(Self::PoissonRight),
            _ => Err(Error::InvalidConfig(format!("unknown target `{s}`"))),
        }
    }
}

/// One row of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub target: Target,
    pub dim: usize,
    pub order: usize,
    pub level: u32,
    pub sinkers: usize,
    pub seed: u64,
    pub dynamic_ratio: f64,
    pub schur: SchurKind,
    pub amp_left: f64,
    pub amp_right: f64,
    pub inner_vcycles: usize,
    pub u_dofs: usize,
    pub p_dofs: usize,
    pub dofs: usize,
    pub iterations: usize,
    pub converged: bool,
    pub status: Option<SolveStatus>,
    pub final_residual: f64,
    pub viscous_iterations: Option<usize>,
    pub poisson_iterations: Option<usize>,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub residual_history: Vec<f64>,
}

impl ResultRecord {
    fn new(cfg: &ExperimentConfig, target: Target) -> Self {
        Self {
            target,
            dim: cfg.dim,
            order: cfg.order,
            level: cfg.level,
            sinkers: cfg.sinkers,
            seed: cfg.seed,
            dynamic_ratio: cfg.dynamic_ratio,
            schur: cfg.schur,
            amp_left: cfg.amp_left,
            amp_right: cfg.amp_right,
            inner_vcycles: cfg.inner_vcycles,
            u_dofs: 0,
            p_dofs: 0,
            dofs: 0,
            iterations: 0,
            converged: false,
            status: None,
            final_residual: f64::NAN,
            viscous_iterations: None,
            poisson_iterations: None,
            setup_seconds: 0.0,
            solve_seconds: 0.0,
            error: None,
            residual_history: Vec::new(),
        }
    }

    /// A record for a run that failed before producing a solve.
    pub fn failed(cfg: &ExperimentConfig, target: Target, err: &Error) -> Self {
        Self { error: Some(err.to_string()), ..Self::new(cfg, target) }
    }

    fn fill(&mut self, rep: &SolveReport) {
        self.iterations = rep.iterations;
        self.converged = rep.converged;
        self.status = Some(rep.status);
        self.final_residual = rep.final_residual;
        self.residual_history = rep.residual_history.clone();
    }
}

/// Closed-form DOF counts `(velocity, pressure)` of the constrained system.
pub fn dof_counts(dim: usize, order: usize, level: u32) -> (usize, usize) {
    let n = order * (1usize << level) - 1;
    let modes = crate::basis::binomial(order - 1 + dim, dim);
    (dim * n.pow(dim as u32), modes << (dim * level as usize))
}

struct Clock {
    start: Instant,
    enabled: bool,
}

impl Clock {
    fn new(enabled: bool) -> Self {
        Self { start: Instant::now(), enabled }
    }

    fn lap(&mut self) -> f64 {
        let t = self.start.elapsed().as_secs_f64();
        self.start = Instant::now();
        if self.enabled {
            t
        } else {
            0.0
        }
    }
}

fn assemble(cfg: &ExperimentConfig) -> Result<(StokesSystem, SinkerConfig)> {
    cfg.validate()?;
    let sinker = cfg.sinker_config()?;
    let sys = StokesSystem::assemble(cfg.mesh()?, cfg.order, &sinker, cfg.backend)?;
    Ok((sys, sinker))
}

fn pressure_null_space(sys: &StokesSystem, offset: usize) -> NullSpace {
    NullSpace::new(offset, sys.pspace.constant_vector())
}

/// Assembles the benchmark and solves the preconditioned Stokes system.
pub fn run_stokes(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    let mut clock = Clock::new(cfg.timing);
    let (sys, sinker) = assemble(cfg)?;
    let mut rec = ResultRecord::new(cfg, Target::Stokes);
    (rec.u_dofs, rec.p_dofs, rec.dofs) = (sys.num_velocity(), sys.num_pressure(), sys.num_dofs());
    let pc = StokesPreconditioner::build(&sys, &sinker, &cfg.schur_config(), &cfg.multigrid_config())?;
    rec.setup_seconds = clock.lap();
    let gc = cfg.gmres_config(Some(pressure_null_space(&sys, sys.num_velocity())));
    let (_, rep) = gmres(&sys, &pc, &sys.rhs(), &gc)?;
    rec.solve_seconds = clock.lap();
    rec.fill(&rep);
    if cfg.components {
        rec.viscous_iterations = Some(solve_viscous(cfg, &sys, Some(&pc))?.iterations);
        if let Some(r) = solve_poisson(cfg, &sys, &sinker, Some(&pc.schur))? {
            rec.poisson_iterations = Some(r.iterations);
        }
    }
    Ok(rec)
}

fn solve_viscous(cfg: &ExperimentConfig, sys: &StokesSystem, pc: Option<&StokesPreconditioner>) -> Result<SolveReport> {
    let gc = cfg.gmres_config(None);
    if let Some(StokesPreconditioner { a_inv: ViscousInverse::Vcycle { mg, .. }, .. }) = pc {
        return Ok(gmres(sys.a.as_ref(), mg.as_ref(), &sys.rhs_u, &gc)?.1);
    }
    let mg = MultigridHierarchy::build(
        *sys.vspace.mesh(),
        ProblemKind::Elasticity,
        &sys.mu,
        sys.vspace.order(),
        &cfg.multigrid_config(),
        Some(sys.a.clone()),
    )?;
    Ok(gmres(sys.a.as_ref(), &mg, &sys.rhs_u, &gc)?.1)
}

/// `g = B M̃_u(1)⁻¹ f`, the discrete divergence of the momentum forcing.
pub fn poisson_rhs(sys: &StokesSystem) -> Result<Vec<f64>> {
    let unit = QuadratureField::constant(sys.mu.num_elements(), sys.vspace.nodes_per_element(), 1.0);
    let m1 = assemble_velocity_lumped_mass(&sys.vspace, &unit)?;
    let f: Vec<f64> = sys.rhs_u.iter().zip(&m1).map(|(a, b)| a / b).collect();
    Ok(sys.b.apply_new(&f))
}

fn solve_poisson(
    cfg: &ExperimentConfig,
    sys: &StokesSystem,
    sinker: &SinkerConfig,
    schur: Option<&SchurApproximation>,
) -> Result<Option<SolveReport>> {
    let built;
    let approx = match schur {
        Some(s) => s,
        None => {
            built = SchurApproximation::build(sys, sinker, &cfg.schur_config(), &cfg.multigrid_config())?;
            &built
        }
    };
    let SchurApproximation::Bfbt(bf) = approx else { return Ok(None) };
    let PoissonInverse::Vcycle { mg, .. } = bf.right_inverse() else { return Ok(None) };
    let g = poisson_rhs(sys)?;
    let gc = cfg.gmres_config(Some(pressure_null_space(sys, 0)));
    Ok(Some(gmres(mg.operator(), mg.as_ref(), &g, &gc)?.1))
}

/// Solves one block with its V-cycle: `A u = f`, or `K_wr p = g`.
pub fn run_component(cfg: &ExperimentConfig, target: Target) -> Result<ResultRecord> {
    let mut clock = Clock::new(cfg.timing);
    let (sys, sinker) = assemble(cfg)?;
    let mut rec = ResultRecord::new(cfg, target);
    (rec.u_dofs, rec.p_dofs, rec.dofs) = (sys.num_velocity(), sys.num_pressure(), sys.num_dofs());
    rec.setup_seconds = clock.lap();
    let rep = match target {
        Target::Viscous => solve_viscous(cfg, &sys, None)?,
        Target::PoissonRight => {
            if cfg.schur == SchurKind::Mass || cfg.inner_mode == InnerMode::Exact {
                return Err(Error::InvalidConfig("the Poisson component needs a BFBT kind with V-cycle inner solves".into()));
            }
            solve_poisson(cfg, &sys, &sinker, None)?.expect("BFBT kinds carry a V-cycle Poisson solver")
        }
        Target::Stokes => return run_stokes(cfg),
    };
    rec.solve_seconds = clock.lap();
    rec.fill(&rep);
    match target {
        Target::Viscous => rec.viscous_iterations = Some(rep.iterations),
        _ => rec.poisson_iterations = Some(rep.iterations),
    }
    Ok(rec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Sinkers,
    DynamicRatio,
    Level,
    Order,
    /// Full grid of `(a_l, a_r)` pairs over the values.
    Amps,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "sinkers" => Ok(Self::Sinkers),
            "dynamic_ratio" | "dr" => Ok(Self::DynamicRatio),
            "level" => Ok(Self::Level),
            "order" => Ok(Self::Order),
            "amps" => Ok(Self::Amps),
            _ => Err(Error::InvalidConfig(format!("unknown sweep axis `{s}`"))),
        }
    }
}

/// The configurations a sweep visits, in output order.
pub fn sweep_configs(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<ExperimentConfig>> {
    let whole = |v: f64| {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as u64)
        } else {
            Err(Error::InvalidConfig(format!("sweep value {v} must be a nonnegative integer")))
        }
    };
    let mut out = Vec::new();
    for &v in values {
        let mut c = base.clone();
        match axis {
            SweepAxis::Sinkers => c.sinkers = whole(v)? as usize,
            SweepAxis::DynamicRatio => c.dynamic_ratio = v,
            SweepAxis::Level => c.level = whole(v)? as u32,
            SweepAxis::Order => c.order = whole(v)? as usize,
            SweepAxis::Amps => {
                for &r in values {
                    let mut c = base.clone();
                    (c.amp_left, c.amp_right) = (v, r);
                    out.push(c);
                }
                continue;
            }
        }
        out.push(c);
    }
    Ok(out)
}

/// Runs every configuration of a sweep, handing each record to `sink` as it
/// completes. Failed runs become records with `error` set.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    target: Target,
    mut sink: impl FnMut(&ResultRecord) -> Result<()>,
) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for c in sweep_configs(base, axis, values)? {
        let rec = match target {
            Target::Stokes => run_stokes(&c),
            t => run_component(&c, t),
        }
        .unwrap_or_else(|e| ResultRecord::failed(&c, target, &e));
        sink(&rec)?;
        out.push(rec);
    }
    Ok(out)
}

/// Streams records as CSV rows; residual histories are left to JSON.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(w: W) -> Self {
        Self { writer: csv::Writer::from_writer(w) }
    }

    pub fn write(&mut self, rec: &ResultRecord) -> Result<()> {
        let row = ResultRecord { residual_history: Vec::new(), ..rec.clone() };
        self.writer.serialize(row)?;
        self.writer.flush()?;
        Ok(())
    }
}

pub fn write_csv<W: Write>(w: W, records: &[ResultRecord]) -> Result<()> {
    let mut sink = CsvSink::new(w);
    records.iter().try_for_each(|r| sink.write(r))
}

/// Records with their full residual histories.
pub fn write_json<W: Write>(mut w: W, records: &[ResultRecord]) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, records)?;
    writeln!(w)?;
    Ok(())
}

pub fn write_records(path: &Path, format: OutputFormat, records: &[ResultRecord]) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        OutputFormat::Csv => write_csv(f, records),
        OutputFormat::Json => write_json(f, records),
    }
}

/// Spectra of `S` and of `S̃⁻¹S` for every approximation kind, with exact
/// inner inverses. With `sanity` the exactly preconditioned spectrum is added.
pub fn run_spectrum(cfg: &ExperimentConfig, sanity: bool) -> Result<Vec<SpectrumReport>> {
    let (sys, sinker) = assemble(&ExperimentConfig { backend: Backend::Assembled, ..cfg.clone() })?;
    check_dense_budget(&sys)?;
    let s = system_schur(&sys)?;
    let ones = sys.pspace.constant_vector();
    let mut out = vec![schur_spectrum(&s, &ones)?];
    if sanity {
        let exact = SchurApproximation::dense(s.clone(), &sys.pspace)?;
        out.push(preconditioned_spectrum(&s, &exact, &ones, SpectrumLabel::ExactPreconditioned)?);
    }
    let mg = cfg.multigrid_config();
    for (kind, label) in [
        (SchurKind::Mass, SpectrumLabel::MassPreconditioned),
        (SchurKind::DiagBfbt, SpectrumLabel::DiagBfbtPreconditioned),
        (SchurKind::Wbfbt, SpectrumLabel::WbfbtPreconditioned),
    ] {
        let sc = SchurConfig { kind, inner_mode: InnerMode::Exact, ..cfg.schur_config() };
        let approx = SchurApproximation::build(&sys, &sinker, &sc, &mg)?;
        out.push(preconditioned_spectrum(&s, &approx, &ones, label)?);
    }
    Ok(out)
}

/// Summary line of one spectrum, with the instance it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub label: SpectrumLabel,
    pub dim: usize,
    pub order: usize,
    pub level: u32,
    pub sinkers: usize,
    pub dynamic_ratio: f64,
    pub count: usize,
    pub nullspace_omitted: usize,
    pub min: f64,
    pub max: f64,
    pub max_imaginary: f64,
}

/// Writes `<label>.csv` per report and `summary.json` into `dir`.
pub fn write_spectra(dir: &Path, cfg: &ExperimentConfig, reports: &[SpectrumReport]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    let mut summary = Vec::new();
    for r in reports {
        let p = dir.join(format!("{}.csv", r.label.as_str()));
        r.write_csv(std::io::BufWriter::new(std::fs::File::create(&p)?), true)?;
        paths.push(p);
        summary.push(SpectrumSummary {
            label: r.label,
            dim: cfg.dim,
            order: cfg.order,
            level: cfg.level,
            sinkers: cfg.sinkers,
            dynamic_ratio: cfg.dynamic_ratio,
            count: r.eigenvalues.len(),
            nullspace_omitted: r.nullspace_omitted,
            min: r.min(),
            max: r.max(),
            max_imaginary: r.max_imaginary(),
        });
    }
    let p = dir.join("summary.json");
    std::fs::write(&p, serde_json::to_string_pretty(&summary)? + "\n")?;
    paths.push(p);
    Ok(paths)
}

/// Writes `A.mtx` (when assembled) and `B.mtx` of the configured system.
pub fn dump_matrices(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let (sys, _) = assemble(cfg)?;
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    let mut emit = |name: &str, m: &crate::sparse::CsrMatrix| -> Result<()> {
        let p = dir.join(name);
        m.write_matrix_market(std::io::BufWriter::new(std::fs::File::create(&p)?))?;
        paths.push(p);
        Ok(())
    };
    if let Some(a) = sys.a.as_csr() {
        emit("A.mtx", a)?;
    }
    emit("B.mtx", &sys.b)?;
    Ok(paths)
}
