//! Configuration, state cache and table generators behind the `perimesh` command.
//!
//! Configuration files are flat `key = value` text; `#` starts a comment and every key
//! is optional.

use crate::coordinates::MassSet;
use crate::eigensolver::{assign_vibrational, EigenRequest, LevelSolver, MeshWavefunction};
use crate::error::{Error, Result};
use crate::hamiltonian::{basis_index, MeshGeometry, StateLabel};
use crate::laguerre_mesh::MeshSpec;
use crate::transitions::{
    emission_record, lifetime, PhysicalConstants, QuadrupoleGrid, StrengthOptions, TransitionRecord, ALPHA_INVERSE,
    BOHR_RADIUS_M,
};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

/// Environment variable overriding the output directory of a configuration.
pub const OUTPUT_DIR_ENV: &str = "PERIMESH_OUTPUT_DIR";

/// A level named by its rotational and vibrational quantum numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Level {
    /// Total orbital angular momentum.
    pub l: u32,
    /// Vibrational index.
    pub v: u32,
}

/// A transition named by its two levels, written `L_i:v_i>L_f:v_f`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransitionSpec {
    /// Initial level.
    pub initial: Level,
    /// Final level.
    pub final_: Level,
}

fn parse_level(s: &str) -> Result<Level> {
    let (l, v) = s
        .split_once(':')
        .ok_or_else(|| Error::InvalidArgument(format!("level '{s}' is not of the form L:v")))?;
    Ok(Level { l: parse_num(l.trim(), "L")?, v: parse_num(v.trim(), "v")? })
}

impl FromStr for TransitionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('>')
            .ok_or_else(|| Error::InvalidArgument(format!("transition '{s}' is not of the form Li:vi>Lf:vf")))?;
        Ok(TransitionSpec { initial: parse_level(a)?, final_: parse_level(b)? })
    }
}

fn parse_num<T: FromStr>(s: &str, key: &str) -> Result<T> {
    s.parse().map_err(|_| Error::InvalidArgument(format!("cannot parse '{s}' for {key}")))
}

/// Every setting of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Mesh shared by all states.
    pub mesh: MeshSpec,
    /// Proton mass in electron masses.
    pub m_p: f64,
    /// Inverse fine-structure constant.
    pub alpha_inverse: f64,
    /// Bohr radius in metres, used for the unit of time.
    pub bohr_radius_m: f64,
    /// Smallest and largest `L`, inclusive; empty when `l_min > l_max`.
    pub l_range: (u32, u32),
    /// Highest vibrational index.
    pub v_max: u32,
    /// Highest projection `K` kept in the expansion.
    pub k_max_cap: u32,
    /// Directory for tables and the state cache.
    pub output_dir: PathBuf,
    /// Table format; only `csv` is supported.
    pub format: String,
    /// Meshes `(N, N_z)` of the convergence ladder, sharing `h_xy` and `h_z`.
    pub ladder: Vec<(usize, usize)>,
    /// Transitions followed along the ladder.
    pub ladder_transitions: Vec<TransitionSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mesh: MeshSpec::PRODUCTION,
            m_p: crate::coordinates::PROTON_MASS,
            alpha_inverse: ALPHA_INVERSE,
            bohr_radius_m: BOHR_RADIUS_M,
            l_range: (0, 40),
            v_max: 3,
            k_max_cap: 2,
            output_dir: PathBuf::from("perimesh-out"),
            format: "csv".into(),
            ladder: vec![(20, 20), (30, 20), (40, 20)],
            ladder_transitions: vec!["4:0>2:0".parse().expect("static"), "30:2>32:0".parse().expect("static")],
        }
    }
}

impl RunConfig {
    /// Parses `key = value` text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "n_xy" => c.mesh.n_xy = parse_num(value, key)?,
                "n_z" => c.mesh.n_z = parse_num(value, key)?,
                "h_xy" => c.mesh.h_xy = parse_num(value, key)?,
                "h_z" => c.mesh.h_z = parse_num(value, key)?,
                "m_p" => c.m_p = parse_num(value, key)?,
                "alpha_inverse" => c.alpha_inverse = parse_num(value, key)?,
                "bohr_radius_m" => c.bohr_radius_m = parse_num(value, key)?,
                "l_min" => c.l_range.0 = parse_num(value, key)?,
                "l_max" => c.l_range.1 = parse_num(value, key)?,
                "v_max" => c.v_max = parse_num(value, key)?,
                "k_max_cap" => c.k_max_cap = parse_num(value, key)?,
                "output_dir" => c.output_dir = PathBuf::from(value),
                "format" => c.format = value.to_string(),
                "ladder" => {
                    c.ladder = split_list(value)
                        .map(|item| {
                            let (n, nz) = item
                                .split_once('x')
                                .ok_or_else(|| Error::InvalidArgument(format!("ladder entry '{item}' is not NxNz")))?;
                            Ok((parse_num(n, "ladder")?, parse_num(nz, "ladder")?))
                        })
                        .collect::<Result<_>>()?
                }
                "ladder_transitions" => c.ladder_transitions = split_list(value).map(str::parse).collect::<Result<_>>()?,
                _ => return Err(Error::InvalidArgument(format!("line {}: unknown key '{key}'", lineno + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Reads and parses a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Checks every field.
    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        MassSet::new(self.m_p)?;
        self.constants().validate()?;
        if self.format != "csv" {
            return Err(Error::InvalidArgument(format!("unsupported format '{}'", self.format)));
        }
        if self.k_max_cap > crate::hamiltonian::K_MAX_CAP {
            return Err(Error::InvalidArgument(format!("k_max_cap {} above {}", self.k_max_cap, crate::hamiltonian::K_MAX_CAP)));
        }
        for &(n, nz) in &self.ladder {
            MeshSpec::new(n, nz, self.mesh.h_xy, self.mesh.h_z)?;
        }
        Ok(())
    }

    /// Physical constants of the run.
    pub fn constants(&self) -> PhysicalConstants {
        PhysicalConstants::from_alpha_inverse(self.alpha_inverse, self.bohr_radius_m)
    }

    /// Masses of the run.
    pub fn masses(&self) -> MassSet {
        MassSet { m_p: self.m_p }
    }

    /// Angular momenta of the sweep, ascending.
    pub fn l_values(&self) -> impl Iterator<Item = u32> {
        self.l_range.0..=self.l_range.1
    }

    /// Short digest of everything that determines the states on `mesh`.
    pub fn state_hash(&self, mesh: &MeshSpec) -> String {
        let key = format!(
            "{} {} {:e} {:e} {:e} {} {}",
            mesh.n_xy, mesh.n_z, mesh.h_xy, mesh.h_z, self.m_p, self.k_max_cap, crate::eigensolver::WAVEFUNCTION_VERSION
        );
        hex::encode(&Sha256::digest(key.as_bytes())[..6])
    }
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

/// Lowest states of each `L`, solved once and cached on disk.
pub struct StateStore {
    config: RunConfig,
    mesh: MeshSpec,
    cache_dir: PathBuf,
    solver: Option<LevelSolver>,
    states: BTreeMap<u32, Vec<MeshWavefunction>>,
}

impl StateStore {
    /// Store for the production mesh of `config`.
    pub fn new(config: &RunConfig) -> Self {
        Self::with_mesh(config, config.mesh)
    }

    /// Store for another mesh with the masses of `config`.
    pub fn with_mesh(config: &RunConfig, mesh: MeshSpec) -> Self {
        StateStore {
            config: config.clone(),
            mesh,
            cache_dir: config.output_dir.join("cache"),
            solver: None,
            states: BTreeMap::new(),
        }
    }

    /// Mesh of the stored states.
    pub fn mesh(&self) -> MeshSpec {
        self.mesh
    }

    fn path(&self, l: u32, v: u32) -> PathBuf {
        self.cache_dir.join(format!("wf_{}_L{l}_v{v}.bin", self.config.state_hash(&self.mesh)))
    }

    fn count_path(&self, l: u32) -> PathBuf {
        self.cache_dir.join(format!("wf_{}_L{l}.levels", self.config.state_hash(&self.mesh)))
    }

    /// Localized levels `v = 0..=v_max` of angular momentum `l`, from the cache or a fresh solve.
    ///
    /// Near the end of a rotational band fewer than `v_max + 1` levels may exist.
    pub fn levels(&mut self, l: u32) -> Result<&[MeshWavefunction]> {
        if !self.states.contains_key(&l) {
            let wfs = self.load_or_solve(l)?;
            self.states.insert(l, wfs);
        }
        Ok(&self.states[&l])
    }

    /// True when `level` exists on this mesh.
    pub fn has_level(&mut self, level: Level) -> Result<bool> {
        Ok(self.levels(level.l)?.len() > level.v as usize)
    }

    /// A single level.
    pub fn level(&mut self, level: Level) -> Result<&MeshWavefunction> {
        let v_max = self.config.v_max;
        let states = self.levels(level.l)?;
        let found = states.len();
        states.get(level.v as usize).ok_or_else(|| {
            if level.v > v_max {
                Error::InvalidArgument(format!("v = {} above v_max = {v_max}", level.v))
            } else {
                Error::InvalidArgument(format!("L = {} has only {found} localized levels", level.l))
            }
        })
    }

    fn load_cached(&self, l: u32) -> Option<Vec<MeshWavefunction>> {
        let count: u32 = fs::read_to_string(self.count_path(l)).ok()?.trim().parse().ok()?;
        (0..count).map(|v| MeshWavefunction::load(&self.path(l, v)).ok()).collect()
    }

    fn load_or_solve(&mut self, l: u32) -> Result<Vec<MeshWavefunction>> {
        if let Some(wfs) = self.load_cached(l) {
            return Ok(wfs);
        }
        if self.solver.is_none() {
            let geom = Arc::new(MeshGeometry::new(self.mesh, self.config.masses())?);
            self.solver = Some(LevelSolver::new(geom));
        }
        let solver = self.solver.as_mut().expect("initialized above");
        let label = StateLabel::natural(l, self.config.k_max_cap);
        let want = self.config.v_max as usize + 1;
        let limit = (want + CONTINUUM_ALLOWANCE).min(basis_index(&label, &self.mesh)?.dim());
        let mut n = want.min(limit);
        let mut start = Vec::new();
        let wfs = loop {
            log::info!("solving L = {l} on {}x{} (K_max = {}, {n} states)", self.mesh.n_xy, self.mesh.n_z, label.k_max);
            let res = solver.solve_from(&label, &EigenRequest::new(n), &start)?;
            let mut wfs = assign_vibrational(&res, &label, &self.mesh, &solver.geometry().masses);
            if wfs.len() >= want || n >= limit {
                wfs.truncate(want);
                break wfs;
            }
            n = (n + want - wfs.len()).min(limit);
            start = res.vectors;
        };
        fs::create_dir_all(&self.cache_dir)?;
        for wf in &wfs {
            wf.save(&self.path(l, wf.v))?;
        }
        fs::write(self.count_path(l), format!("{}\n", wfs.len()))?;
        Ok(wfs)
    }
}

/// Extra eigenpairs a store may request per `L` to replace discretized continuum states.
pub const CONTINUUM_ALLOWANCE: usize = 8;

/// Outcome of a command: rows written and per-item failures.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    /// File written.
    pub path: PathBuf,
    /// Data rows written.
    pub rows: usize,
    /// Diagnostics of items that could not be computed.
    pub failures: Vec<String>,
}

/// Six significant figures in scientific notation with a lowercase exponent.
pub fn sci6(x: f64) -> String {
    if x.is_infinite() {
        return "inf".into();
    }
    format!("{x:.5e}")
}

/// Seventeen significant figures, enough to round-trip an energy.
pub fn energy17(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_table(config: &RunConfig, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(&config.output_dir)?;
    let path = config.output_dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

/// Energies of every `(L, v)` of the sweep, written to `spectrum.csv`.
pub fn cmd_spectrum(config: &RunConfig) -> Result<Report> {
    let mut store = StateStore::new(config);
    let mut out = String::from("L,v,E_hartree,quasibound\n");
    let mut rows = 0;
    let mut failures = Vec::new();
    for l in config.l_values() {
        match store.levels(l) {
            Ok(states) => {
                for wf in states {
                    writeln!(out, "{},{},{},{}", l, wf.v, energy17(wf.energy), wf.quasibound).expect("string write");
                    rows += 1;
                }
            }
            Err(e) => failures.push(format!("L={l}: {e}")),
        }
    }
    let path = write_table(config, "spectrum.csv", &out)?;
    Ok(Report { path, rows, failures })
}

/// Which pairs a transition table covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransitionMode {
    /// Same `v`, `L_f = L_i - 2`.
    Intra,
    /// Different `v`, `L_f - L_i` in `{0, -2, +2}`, emission only.
    Inter,
}

impl FromStr for TransitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intra" => Ok(TransitionMode::Intra),
            "inter" => Ok(TransitionMode::Inter),
            _ => Err(Error::InvalidArgument(format!("transition mode '{s}' is neither intra nor inter"))),
        }
    }
}

fn direction(r: &TransitionRecord, forbidden: bool) -> &'static str {
    if forbidden {
        "forbidden"
    } else if r.reversed {
        "reversed"
    } else {
        "down"
    }
}

/// Requested pairs of a transition table, ordered by initial level.
pub fn transition_pairs(config: &RunConfig, mode: TransitionMode) -> Vec<(Level, Level)> {
    let mut pairs = Vec::new();
    let (lo, hi) = config.l_range;
    for l in config.l_values() {
        for v in 0..=config.v_max {
            let init = Level { l, v };
            match mode {
                TransitionMode::Intra => {
                    if l >= lo + 2 {
                        pairs.push((init, Level { l: l - 2, v }));
                    }
                }
                TransitionMode::Inter => {
                    for lf in [l.wrapping_sub(2), l, l + 2] {
                        if lf < lo || lf > hi || lf > l + 2 || l + lf < 2 {
                            continue;
                        }
                        for vf in 0..=config.v_max {
                            if vf != v {
                                pairs.push((init, Level { l: lf, v: vf }));
                            }
                        }
                    }
                }
            }
        }
    }
    pairs
}

/// Transition table written to `transitions_<mode>.csv`.
///
/// Intraband pairs are oriented downwards and reversals are annotated; interband rows keep
/// only pairs whose final level lies lower. Pairs involving a level absent from the mesh are skipped.
pub fn cmd_transitions(config: &RunConfig, mode: TransitionMode) -> Result<Report> {
    let mut store = StateStore::new(config);
    let grid = QuadrupoleGrid::new(config.mesh, config.masses())?;
    let consts = config.constants();
    let opts = StrengthOptions::default();
    let mut out = String::from("L_i,v_i,L_f,v_f,S,f,W_per_s,direction\n");
    let mut rows = 0;
    let mut failures = Vec::new();
    for (a, b) in transition_pairs(config, mode) {
        let rec = (|| -> Result<Option<(TransitionRecord, bool)>> {
            if !store.has_level(a)? || !store.has_level(b)? {
                return Ok(None);
            }
            let wa = store.level(a)?.clone();
            let wb = store.level(b)?.clone();
            if mode == TransitionMode::Inter && wb.energy >= wa.energy {
                return Ok(None);
            }
            let rec = emission_record(&grid, &wa, &wb, &opts, &consts)?;
            let forbidden = grid.strength(&wa, &wb, &opts)?.forbidden;
            Ok(Some((rec, forbidden)))
        })();
        match rec {
            Ok(Some((r, forbidden))) => {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    r.initial.label.l,
                    r.initial.v,
                    r.final_.label.l,
                    r.final_.v,
                    sci6(r.s),
                    sci6(r.f),
                    sci6(r.w),
                    direction(&r, forbidden)
                )
                .expect("string write");
                rows += 1;
            }
            Ok(None) => {}
            Err(e) => {
                log::warn!("skipping {}:{} -> {}:{}: {e}", a.l, a.v, b.l, b.v);
                failures.push(format!("{}:{}>{}:{}: {e}", a.l, a.v, b.l, b.v));
            }
        }
    }
    let name = match mode {
        TransitionMode::Intra => "transitions_intra.csv",
        TransitionMode::Inter => "transitions_inter.csv",
    };
    let path = write_table(config, name, &out)?;
    Ok(Report { path, rows, failures })
}

/// One row of a convergence ladder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LadderRow {
    /// Mesh of the row.
    pub mesh: MeshSpec,
    /// Transition followed.
    pub transition: TransitionSpec,
    /// Initial energy.
    pub e_i: f64,
    /// Final energy.
    pub e_f: f64,
    /// Rates with the kernel sum truncated at `kappa = 0`, `1` and `2`.
    pub w: [f64; 3],
}

/// Energies and rates of one transition on one mesh.
pub fn ladder_row(store: &mut StateStore, t: &TransitionSpec, consts: &PhysicalConstants) -> Result<LadderRow> {
    let mesh = store.mesh();
    let wi = store.level(t.initial)?.clone();
    let wf = store.level(t.final_)?.clone();
    let grid = QuadrupoleGrid::new(mesh, MassSet { m_p: wi.m_p })?;
    let mut w = [0.0; 3];
    for (kappa, slot) in w.iter_mut().enumerate() {
        let opts = StrengthOptions { kappa_max: kappa as u32, ..Default::default() };
        *slot = emission_record(&grid, &wi, &wf, &opts, consts)?.w;
    }
    Ok(LadderRow { mesh, transition: *t, e_i: wi.energy, e_f: wf.energy, w })
}

/// Convergence ladder written to `converge.csv`.
pub fn cmd_converge(config: &RunConfig) -> Result<Report> {
    let consts = config.constants();
    let mut out = String::from("N,N_z,L_i,v_i,L_f,v_f,E_i,E_f,W0_per_s,W1_per_s,W_per_s\n");
    let mut rows = 0;
    let mut failures = Vec::new();
    for &(n, nz) in &config.ladder {
        let mesh = MeshSpec::new(n, nz, config.mesh.h_xy, config.mesh.h_z)?;
        let mut store = StateStore::with_mesh(config, mesh);
        for t in &config.ladder_transitions {
            match ladder_row(&mut store, t, &consts) {
                Ok(r) => {
                    writeln!(
                        out,
                        "{n},{nz},{},{},{},{},{},{},{:.9e},{:.9e},{:.9e}",
                        t.initial.l,
                        t.initial.v,
                        t.final_.l,
                        t.final_.v,
                        energy17(r.e_i),
                        energy17(r.e_f),
                        r.w[0],
                        r.w[1],
                        r.w[2]
                    )
                    .expect("string write");
                    rows += 1;
                }
                Err(e) => failures.push(format!("{n}x{nz} {}:{}>{}:{}: {e}", t.initial.l, t.initial.v, t.final_.l, t.final_.v)),
            }
        }
    }
    let path = write_table(config, "converge.csv", &out)?;
    Ok(Report { path, rows, failures })
}

/// Rates of every E2 channel from `level` to lower levels of the sweep.
pub fn decay_rates(
    store: &mut StateStore,
    grid: &QuadrupoleGrid,
    config: &RunConfig,
    level: Level,
) -> Result<Vec<(Level, f64)>> {
    let opts = StrengthOptions::default();
    let consts = config.constants();
    let wi = store.level(level)?.clone();
    let mut rates = Vec::new();
    let (lo, hi) = config.l_range;
    for lf in [level.l.wrapping_sub(2), level.l, level.l + 2] {
        if lf < lo || lf > hi || lf > level.l + 2 || level.l + lf < 2 {
            continue;
        }
        for wf in store.levels(lf)?.to_vec() {
            if wf.energy < wi.energy {
                let r = emission_record(grid, &wi, &wf, &opts, &consts)?;
                rates.push((Level { l: lf, v: wf.v }, r.w));
            }
        }
    }
    Ok(rates)
}

/// Lifetimes of every localized `(L, v)` of the sweep, written to `lifetimes.csv`.
pub fn cmd_lifetimes(config: &RunConfig) -> Result<Report> {
    let mut store = StateStore::new(config);
    let grid = QuadrupoleGrid::new(config.mesh, config.masses())?;
    let mut out = String::from("L,v,tau_s\n");
    let mut rows = 0;
    let mut failures = Vec::new();
    for l in config.l_values() {
        for v in 0..=config.v_max {
            let level = Level { l, v };
            match store.has_level(level) {
                Ok(true) => {}
                Ok(false) => continue,
                Err(e) => {
                    failures.push(format!("{l}:{v}: {e}"));
                    continue;
                }
            }
            match decay_rates(&mut store, &grid, config, level) {
                Ok(rates) => {
                    let w: Vec<f64> = rates.iter().map(|r| r.1).collect();
                    writeln!(out, "{l},{v},{}", lifetime(&w)).expect("string write");
                    rows += 1;
                }
                Err(e) => failures.push(format!("{l}:{v}: {e}")),
            }
        }
    }
    let path = write_table(config, "lifetimes.csv", &out)?;
    Ok(Report { path, rows, failures })
}
