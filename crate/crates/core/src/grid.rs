//! Network data model, case-file ingestion and derived electrical parameters.
//!
//! All quantities are stored in per-unit on `base_mva`, angles in radians.
//! Two text formats are supported: a strict subset of the MATPOWER `.m`
//! case format and a native self-describing key=value format (see
//! `docs/case-format.md`).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

pub const DEFAULT_DVA_BOUND: f64 = std::f64::consts::FRAC_PI_6;
/// Thermal limit used when a case file marks a branch as unlimited (rate 0).
pub const UNLIMITED_S_MAX: f64 = 100.0;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("syntax error at line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("semantic error in {element}: {msg}")]
    Semantic { element: String, msg: String },
}

impl GridError {
    pub fn semantic(element: impl Into<String>, msg: impl Into<String>) -> Self {
        GridError::Semantic {
            element: element.into(),
            msg: msg.into(),
        }
    }
}

/// Π-model admittances of a branch, per-unit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PiAdmittance {
    pub gff: f64,
    pub bff: f64,
    pub gft: f64,
    pub bft: f64,
    pub gtf: f64,
    pub btf: f64,
    pub gtt: f64,
    pub btt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bus {
    pub gs: f64,
    pub bs: f64,
    pub vm_min: f64,
    pub vm_max: f64,
}

impl Default for Bus {
    fn default() -> Self {
        Bus {
            gs: 0.0,
            bs: 0.0,
            vm_min: 0.9,
            vm_max: 1.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b_charge: f64,
    pub tap: f64,
    pub shift: f64,
    pub s_max: f64,
    pub dva_min: f64,
    pub dva_max: f64,
    pub pi: PiAdmittance,
}

impl Branch {
    pub fn new(from: usize, to: usize, r: f64, x: f64) -> Self {
        Branch {
            from,
            to,
            r,
            x,
            b_charge: 0.0,
            tap: 1.0,
            shift: 0.0,
            s_max: UNLIMITED_S_MAX,
            dva_min: -DEFAULT_DVA_BOUND,
            dva_max: DEFAULT_DVA_BOUND,
            pi: PiAdmittance::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub pg_min: f64,
    pub pg_max: f64,
    pub qg_min: f64,
    pub qg_max: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: usize,
    pub pd_ref: f64,
    pub qd_ref: f64,
}

/// Static network data. Immutable after construction; safe to share
/// across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub ref_bus: usize,
    pub base_mva: f64,
    pub shed_cost: f64,
}

/// Series admittance 1/(r + jx) as (g, b).
fn series_admittance(r: f64, x: f64) -> (f64, f64) {
    let d = r * r + x * x;
    (r / d, -x / d)
}

/// Π-model branch admittances from the series impedance, total charging
/// susceptance, off-nominal tap ratio and phase shift.
pub fn derive_pi_admittance(branch: &Branch) -> Result<PiAdmittance, GridError> {
    if branch.r == 0.0 && branch.x == 0.0 {
        return Err(GridError::semantic(
            format!("branch {}-{}", branch.from, branch.to),
            "degenerate impedance r=x=0",
        ));
    }
    let (gs, bs) = series_admittance(branch.r, branch.x);
    let (ys_g, ys_b) = (gs, bs + branch.b_charge / 2.0);
    let t2 = branch.tap * branch.tap;
    // from-to: -y_s / (tap * e^{-j shift}); to-from: -y_s / (tap * e^{+j shift})
    let (cs, sn) = (branch.shift.cos(), branch.shift.sin());
    // 1 / e^{-j shift} = e^{+j shift}
    let gft = -(gs * cs - bs * sn) / branch.tap;
    let bft = -(bs * cs + gs * sn) / branch.tap;
    let gtf = -(gs * cs + bs * sn) / branch.tap;
    let btf = -(bs * cs - gs * sn) / branch.tap;
    Ok(PiAdmittance {
        gff: ys_g / t2,
        bff: ys_b / t2,
        gft,
        bft,
        gtf,
        btf,
        gtt: ys_g,
        btt: ys_b,
    })
}

/// Series susceptance Im(1/(r+jx))/tap, the b_e of the DC flow equation.
/// Negative for inductive branches so that -b_e ~ 1/x > 0.
pub fn dc_susceptance(branch: &Branch) -> f64 {
    let (_, b) = series_admittance(branch.r, branch.x);
    b / branch.tap
}

impl GridCase {
    /// Derives Π admittances on every branch and validates the case.
    pub fn finalize(mut self) -> Result<GridCase, GridError> {
        for i in 0..self.branches.len() {
            self.branches[i].pi = derive_pi_admittance(&self.branches[i])?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn nominal_gs(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.gs).collect()
    }

    pub fn nominal_b(&self) -> Vec<f64> {
        self.branches.iter().map(dc_susceptance).collect()
    }

    pub fn total_pd_ref(&self) -> f64 {
        self.loads.iter().map(|l| l.pd_ref).sum()
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let n = self.buses.len();
        if n == 0 {
            return Err(GridError::semantic("case", "no buses"));
        }
        if self.base_mva <= 0.0 {
            return Err(GridError::semantic("case", "base_mva must be > 0"));
        }
        if self.ref_bus >= n {
            return Err(GridError::semantic(
                "case",
                format!("ref_bus {} out of range (|N|={})", self.ref_bus, n),
            ));
        }
        for (i, bus) in self.buses.iter().enumerate() {
            if !(bus.vm_min > 0.0) {
                return Err(GridError::semantic(format!("bus {i}"), "vm_min must be > 0"));
            }
            if bus.vm_min > bus.vm_max {
                return Err(GridError::semantic(format!("bus {i}"), "vm_min > vm_max"));
            }
        }
        for (e, br) in self.branches.iter().enumerate() {
            let name = format!("branch {e}");
            if br.from >= n || br.to >= n {
                return Err(GridError::semantic(name, "dangling bus reference"));
            }
            if br.x == 0.0 {
                return Err(GridError::semantic(name, "zero reactance"));
            }
            if !(br.tap > 0.0) {
                return Err(GridError::semantic(name, "tap must be > 0"));
            }
            if !(br.s_max > 0.0) {
                return Err(GridError::semantic(name, "thermal limit must be > 0"));
            }
            if !(br.dva_min <= 0.0 && 0.0 <= br.dva_max) {
                return Err(GridError::semantic(name, "angle bounds must straddle 0"));
            }
        }
        for (g, gen) in self.generators.iter().enumerate() {
            let name = format!("gen {g}");
            if gen.bus >= n {
                return Err(GridError::semantic(name, "dangling bus reference"));
            }
            if gen.pg_min > gen.pg_max {
                return Err(GridError::semantic(name, "pg_min > pg_max"));
            }
            if gen.qg_min > gen.qg_max {
                return Err(GridError::semantic(name, "qg_min > qg_max"));
            }
        }
        for (l, load) in self.loads.iter().enumerate() {
            if load.bus >= n {
                return Err(GridError::semantic(format!("load {l}"), "dangling bus reference"));
            }
        }
        Ok(())
    }

    /// Serializes to the native case format. `parse_case` on the output
    /// reproduces the case field-for-field (floats printed shortest
    /// round-trip).
    pub fn to_native(&self) -> String {
        let mut s = String::new();
        writeln!(s, "dc2ac-case v1").unwrap();
        writeln!(s, "base_mva {}", self.base_mva).unwrap();
        writeln!(s, "shed_cost {}", self.shed_cost).unwrap();
        writeln!(s, "ref_bus {}", self.ref_bus).unwrap();
        for b in &self.buses {
            writeln!(
                s,
                "bus gs={} bs={} vm_min={} vm_max={}",
                b.gs, b.bs, b.vm_min, b.vm_max
            )
            .unwrap();
        }
        for br in &self.branches {
            writeln!(
                s,
                "branch from={} to={} r={} x={} b_charge={} tap={} shift={} s_max={} dva_min={} dva_max={}",
                br.from, br.to, br.r, br.x, br.b_charge, br.tap, br.shift, br.s_max, br.dva_min, br.dva_max
            )
            .unwrap();
        }
        for g in &self.generators {
            writeln!(
                s,
                "gen bus={} pg_min={} pg_max={} qg_min={} qg_max={} cost={}",
                g.bus, g.pg_min, g.pg_max, g.qg_min, g.qg_max, g.cost
            )
            .unwrap();
        }
        for l in &self.loads {
            writeln!(s, "load bus={} pd={} qd={}", l.bus, l.pd_ref, l.qd_ref).unwrap();
        }
        s
    }

    /// SHA-256 of the canonical native serialization, hex-encoded.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.to_native().as_bytes());
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses a case in either supported format, returning the validated case
/// and a list of warnings for ignored fields.
pub fn parse_case(text: &str) -> Result<(GridCase, Vec<String>), GridError> {
    let head = text.trim_start();
    if head.starts_with("dc2ac-case") {
        parse_native(text)
    } else {
        parse_matpower(text)
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, GridError> {
    tok.parse().map_err(|_| GridError::Syntax {
        line,
        msg: format!("expected number, got `{tok}`"),
    })
}

fn parse_usize(tok: &str, line: usize) -> Result<usize, GridError> {
    tok.parse().map_err(|_| GridError::Syntax {
        line,
        msg: format!("expected index, got `{tok}`"),
    })
}

fn kv_fields(line: &str, lineno: usize) -> Result<BTreeMap<&str, &str>, GridError> {
    let mut map = BTreeMap::new();
    for tok in line.split_whitespace().skip(1) {
        let (k, v) = tok.split_once('=').ok_or(GridError::Syntax {
            line: lineno,
            msg: format!("expected key=value, got `{tok}`"),
        })?;
        map.insert(k, v);
    }
    Ok(map)
}

fn req<'a>(
    map: &BTreeMap<&str, &'a str>,
    key: &str,
    lineno: usize,
) -> Result<&'a str, GridError> {
    map.get(key).copied().ok_or(GridError::Syntax {
        line: lineno,
        msg: format!("missing field `{key}`"),
    })
}

fn parse_native(text: &str) -> Result<(GridCase, Vec<String>), GridError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(GridError::Syntax {
        line: 1,
        msg: "empty file".into(),
    })?;
    if header.trim() != "dc2ac-case v1" {
        return Err(GridError::Syntax {
            line: 1,
            msg: format!("unsupported header `{}`", header.trim()),
        });
    }
    let mut warnings = Vec::new();
    let mut base_mva = None;
    let mut shed_cost = None;
    let mut ref_bus = None;
    let mut buses = Vec::new();
    let mut branches = Vec::new();
    let mut generators = Vec::new();
    let mut loads = Vec::new();
    for (idx, raw) in lines {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let kind = line.split_whitespace().next().unwrap();
        match kind {
            "base_mva" | "shed_cost" | "ref_bus" => {
                let val = line.split_whitespace().nth(1).ok_or(GridError::Syntax {
                    line: lineno,
                    msg: format!("missing value for `{kind}`"),
                })?;
                match kind {
                    "base_mva" => base_mva = Some(parse_f64(val, lineno)?),
                    "shed_cost" => shed_cost = Some(parse_f64(val, lineno)?),
                    _ => ref_bus = Some(parse_usize(val, lineno)?),
                }
            }
            "bus" => {
                let f = kv_fields(line, lineno)?;
                buses.push(Bus {
                    gs: parse_f64(req(&f, "gs", lineno)?, lineno)?,
                    bs: parse_f64(req(&f, "bs", lineno)?, lineno)?,
                    vm_min: parse_f64(req(&f, "vm_min", lineno)?, lineno)?,
                    vm_max: parse_f64(req(&f, "vm_max", lineno)?, lineno)?,
                });
            }
            "branch" => {
                let f = kv_fields(line, lineno)?;
                branches.push(Branch {
                    from: parse_usize(req(&f, "from", lineno)?, lineno)?,
                    to: parse_usize(req(&f, "to", lineno)?, lineno)?,
                    r: parse_f64(req(&f, "r", lineno)?, lineno)?,
                    x: parse_f64(req(&f, "x", lineno)?, lineno)?,
                    b_charge: parse_f64(req(&f, "b_charge", lineno)?, lineno)?,
                    tap: parse_f64(req(&f, "tap", lineno)?, lineno)?,
                    shift: parse_f64(req(&f, "shift", lineno)?, lineno)?,
                    s_max: parse_f64(req(&f, "s_max", lineno)?, lineno)?,
                    dva_min: parse_f64(req(&f, "dva_min", lineno)?, lineno)?,
                    dva_max: parse_f64(req(&f, "dva_max", lineno)?, lineno)?,
                    pi: PiAdmittance::default(),
                });
            }
            "gen" => {
                let f = kv_fields(line, lineno)?;
                generators.push(Generator {
                    bus: parse_usize(req(&f, "bus", lineno)?, lineno)?,
                    pg_min: parse_f64(req(&f, "pg_min", lineno)?, lineno)?,
                    pg_max: parse_f64(req(&f, "pg_max", lineno)?, lineno)?,
                    qg_min: parse_f64(req(&f, "qg_min", lineno)?, lineno)?,
                    qg_max: parse_f64(req(&f, "qg_max", lineno)?, lineno)?,
                    cost: parse_f64(req(&f, "cost", lineno)?, lineno)?,
                });
            }
            "load" => {
                let f = kv_fields(line, lineno)?;
                loads.push(Load {
                    bus: parse_usize(req(&f, "bus", lineno)?, lineno)?,
                    pd_ref: parse_f64(req(&f, "pd", lineno)?, lineno)?,
                    qd_ref: parse_f64(req(&f, "qd", lineno)?, lineno)?,
                });
            }
            other => {
                warnings.push(format!("line {lineno}: unknown record `{other}` ignored"));
            }
        }
    }
    let base_mva = base_mva.ok_or(GridError::semantic("case", "missing base_mva"))?;
    let max_cost = generators.iter().map(|g| g.cost).fold(0.0_f64, f64::max);
    let case = GridCase {
        buses,
        branches,
        generators,
        loads,
        ref_bus: ref_bus.ok_or(GridError::semantic("case", "missing ref_bus"))?,
        base_mva,
        shed_cost: shed_cost.unwrap_or(100.0 * max_cost),
    };
    Ok((case.finalize()?, warnings))
}

/// Reads `mpc.<name> = [ rows ];` matrices and `mpc.<name> = scalar;`
/// assignments from a MATPOWER-style file.
struct MatpowerRaw {
    base_mva: f64,
    matrices: BTreeMap<String, Vec<Vec<f64>>>,
    warnings: Vec<String>,
}

fn parse_matpower_raw(text: &str) -> Result<MatpowerRaw, GridError> {
    let mut base_mva = None;
    let mut matrices: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut current: Option<(String, Vec<Vec<f64>>, Vec<f64>)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('%').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        if let Some((name, mut rows, mut row)) = current.take() {
            // inside a matrix literal
            let (body, closed) = match line.find(']') {
                Some(p) => (&line[..p], true),
                None => (line, false),
            };
            for piece in body.split(';') {
                for tok in piece.split_whitespace().flat_map(|t| t.split(',')) {
                    if tok.is_empty() {
                        continue;
                    }
                    row.push(parse_f64(tok, lineno)?);
                }
                if !row.is_empty() {
                    rows.push(std::mem::take(&mut row));
                }
            }
            if closed {
                if !row.is_empty() {
                    rows.push(row);
                }
                matrices.insert(name, rows);
            } else {
                current = Some((name, rows, row));
            }
            continue;
        }
        if line.starts_with("function") {
            continue;
        }
        if let Some(rest) = line.strip_prefix("mpc.") {
            let (name, rhs) = rest.split_once('=').ok_or(GridError::Syntax {
                line: lineno,
                msg: "expected assignment".into(),
            })?;
            let name = name.trim().to_string();
            let rhs = rhs.trim().trim_end_matches(';').trim();
            if name == "baseMVA" {
                base_mva = Some(parse_f64(rhs, lineno)?);
            } else if name == "version" {
                // quoted string, ignored
            } else if let Some(body) = rhs.strip_prefix('[') {
                current = Some((name, Vec::new(), Vec::new()));
                if !body.is_empty() {
                    // reuse the in-matrix path for same-line content
                    let (n, rows, row) = current.take().unwrap();
                    current = Some((n, rows, row));
                    let fake = body.to_string();
                    let (name2, mut rows, mut row) = current.take().unwrap();
                    let (content, closed) = match fake.find(']') {
                        Some(p) => (fake[..p].to_string(), true),
                        None => (fake, false),
                    };
                    for piece in content.split(';') {
                        for tok in piece.split_whitespace().flat_map(|t| t.split(',')) {
                            if tok.is_empty() {
                                continue;
                            }
                            row.push(parse_f64(tok, lineno)?);
                        }
                        if !row.is_empty() {
                            rows.push(std::mem::take(&mut row));
                        }
                    }
                    if closed {
                        if !row.is_empty() {
                            rows.push(row);
                        }
                        matrices.insert(name2, rows);
                    } else {
                        current = Some((name2, rows, row));
                    }
                }
            } else {
                warnings.push(format!("line {lineno}: ignored assignment mpc.{name}"));
            }
        } else {
            warnings.push(format!("line {lineno}: ignored line `{line}`"));
        }
    }
    Ok(MatpowerRaw {
        base_mva: base_mva.ok_or(GridError::semantic("case", "missing mpc.baseMVA"))?,
        matrices,
        warnings,
    })
}

fn parse_matpower(text: &str) -> Result<(GridCase, Vec<String>), GridError> {
    let mut raw = parse_matpower_raw(text)?;
    let base = raw.base_mva;
    let bus_rows = raw
        .matrices
        .remove("bus")
        .ok_or(GridError::semantic("case", "missing mpc.bus"))?;
    let gen_rows = raw.matrices.remove("gen").unwrap_or_default();
    let branch_rows = raw.matrices.remove("branch").unwrap_or_default();
    let gencost_rows = raw.matrices.remove("gencost").unwrap_or_default();
    for name in raw.matrices.keys() {
        raw.warnings.push(format!("ignored matrix mpc.{name}"));
    }

    let mut bus_index: BTreeMap<i64, usize> = BTreeMap::new();
    let mut buses = Vec::new();
    let mut loads = Vec::new();
    let mut ref_bus = None;
    for (i, row) in bus_rows.iter().enumerate() {
        if row.len() < 13 {
            return Err(GridError::semantic(
                format!("bus row {}", i + 1),
                format!("expected 13 columns, got {}", row.len()),
            ));
        }
        let id = row[0] as i64;
        bus_index.insert(id, i);
        if row[1] as i64 == 3 {
            if ref_bus.is_some() {
                return Err(GridError::semantic("case", "multiple reference buses"));
            }
            ref_bus = Some(i);
        }
        buses.push(Bus {
            gs: row[4] / base,
            bs: row[5] / base,
            vm_max: row[11],
            vm_min: row[12],
        });
        if row[2] != 0.0 || row[3] != 0.0 {
            loads.push(Load {
                bus: i,
                pd_ref: row[2] / base,
                qd_ref: row[3] / base,
            });
        }
    }
    let ref_bus = ref_bus.ok_or(GridError::semantic("case", "no reference (type 3) bus"))?;

    let lookup = |id: f64, what: &str, elem: String| -> Result<usize, GridError> {
        bus_index
            .get(&(id as i64))
            .copied()
            .ok_or_else(|| GridError::semantic(elem, format!("{what} references unknown bus {id}")))
    };

    let mut generators = Vec::new();
    let mut gen_src = Vec::new(); // original row index per kept generator
    for (g, row) in gen_rows.iter().enumerate() {
        if row.len() < 10 {
            return Err(GridError::semantic(
                format!("gen row {}", g + 1),
                format!("expected >= 10 columns, got {}", row.len()),
            ));
        }
        if row.len() > 7 && row[7] == 0.0 {
            raw.warnings.push(format!("gen row {} out of service, dropped", g + 1));
            continue;
        }
        let bus = lookup(row[0], "generator", format!("gen {}", g + 1))?;
        generators.push(Generator {
            bus,
            pg_min: row[9] / base,
            pg_max: row[8] / base,
            qg_min: row[4] / base,
            qg_max: row[3] / base,
            cost: 0.0,
        });
        gen_src.push(g);
    }
    // gencost: MODEL STARTUP SHUTDOWN NCOST c(n-1) ... c0; linear rows only
    if !gencost_rows.is_empty() {
        if gencost_rows.len() != gen_rows.len() {
            return Err(GridError::semantic(
                "gencost",
                "row count does not match mpc.gen",
            ));
        }
        for (k, &g) in gen_src.iter().enumerate() {
            let row = &gencost_rows[g];
            if row.len() < 4 || row[0] as i64 != 2 {
                return Err(GridError::semantic(
                    format!("gencost row {}", g + 1),
                    "only polynomial (model 2) cost rows are supported",
                ));
            }
            let ncost = row[3] as usize;
            let coeffs = &row[4..4 + ncost];
            let linear = match ncost {
                0 => 0.0,
                1 => 0.0,
                2 => coeffs[0],
                _ => {
                    let higher: f64 = coeffs[..ncost - 2].iter().map(|c| c.abs()).sum();
                    if higher > 0.0 {
                        raw.warnings.push(format!(
                            "gencost row {}: nonlinear terms ignored, using linear coefficient",
                            g + 1
                        ));
                    }
                    coeffs[ncost - 2]
                }
            };
            // $/MWh -> $/p.u.
            generators[k].cost = linear * base;
        }
    }

    let mut branches = Vec::new();
    for (e, row) in branch_rows.iter().enumerate() {
        if row.len() < 11 {
            return Err(GridError::semantic(
                format!("branch row {}", e + 1),
                format!("expected >= 11 columns, got {}", row.len()),
            ));
        }
        if row[10] == 0.0 {
            raw.warnings
                .push(format!("branch row {} out of service, dropped", e + 1));
            continue;
        }
        let elem = format!("branch {}", e + 1);
        let from = lookup(row[0], "branch", elem.clone())?;
        let to = lookup(row[1], "branch", elem)?;
        let rate_a = row[5];
        let s_max = if rate_a > 0.0 {
            rate_a / base
        } else {
            UNLIMITED_S_MAX
        };
        let (dva_min, dva_max) = if row.len() >= 13 && !(row[11] == 0.0 && row[12] == 0.0) {
            (row[11].to_radians(), row[12].to_radians())
        } else {
            (-DEFAULT_DVA_BOUND, DEFAULT_DVA_BOUND)
        };
        branches.push(Branch {
            from,
            to,
            r: row[2],
            x: row[3],
            b_charge: row[4],
            tap: if row[8] > 0.0 { row[8] } else { 1.0 },
            shift: row[9].to_radians(),
            s_max,
            dva_min,
            dva_max,
            pi: PiAdmittance::default(),
        });
    }

    let max_cost = generators.iter().map(|g| g.cost).fold(0.0_f64, f64::max);
    let case = GridCase {
        buses,
        branches,
        generators,
        loads,
        ref_bus,
        base_mva: base,
        shed_cost: 100.0 * max_cost.max(1.0),
    };
    Ok((case.finalize()?, raw.warnings))
}
