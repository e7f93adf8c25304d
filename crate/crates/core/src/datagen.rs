//! Labeled dataset generation: random load scenarios solved to AC-OPF
//! optimality. Every sample is drawn from an RNG keyed by (seed, sample
//! index), so the output is byte-identical regardless of how many worker
//! threads are used.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::acopf::{check_ac_feasibility, solve_acopf, AcSolution};
use crate::grid::GridCase;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad dataset file: {0}")]
    Format(String),
    #[error("dataset was generated for case {found}, expected {expected}")]
    CaseMismatch { expected: String, found: String },
    #[error("AC-OPF convergence rate {converged}/{attempted} is below 50%; refusing to build a dataset from it")]
    TooManyFailures { converged: usize, attempted: usize },
}

/// Multiplicative load scaling: pd_j = alpha (1 + eps_j) pd_ref_j with a
/// shared draw alpha ~ U(alpha_min, alpha_max) and independent per-load
/// eps_j ~ U(-eps_max, eps_max). qd_j uses the same factor as pd_j.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub eps_max: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            alpha_min: 0.7,
            alpha_max: 1.1,
            eps_max: 0.15,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if !(self.alpha_min.is_finite() && self.alpha_max.is_finite() && self.eps_max.is_finite()) {
            return Err(DatagenError::Format("sampler parameters must be finite".into()));
        }
        if self.alpha_min <= 0.0 || self.alpha_max < self.alpha_min {
            return Err(DatagenError::Format("need 0 < alpha_min <= alpha_max".into()));
        }
        if !(0.0..1.0).contains(&self.eps_max) {
            return Err(DatagenError::Format("need 0 <= eps_max < 1".into()));
        }
        Ok(())
    }
}

/// One labeled scenario: sampled demands plus the AC-OPF solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub index: u64,
    pub pd: Vec<f64>,
    pub qd: Vec<f64>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    pub pf: Vec<f64>,
    pub qf: Vec<f64>,
    pub pt: Vec<f64>,
    pub qt: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub case_hash: String,
    pub seed: u64,
    pub config: SamplerConfig,
    pub attempted: usize,
    pub failed: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    key[16..24].copy_from_slice(b"dc2ac-ds");
    ChaCha8Rng::from_seed(key)
}

/// Draws one demand scenario; returns (pd, qd).
pub fn sample_loads<R: Rng>(
    case: &GridCase,
    config: &SamplerConfig,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let alpha = rng.gen_range(config.alpha_min..=config.alpha_max);
    let mut pd = Vec::with_capacity(case.loads.len());
    let mut qd = Vec::with_capacity(case.loads.len());
    for load in &case.loads {
        let eps = if config.eps_max > 0.0 {
            rng.gen_range(-config.eps_max..=config.eps_max)
        } else {
            0.0
        };
        let factor = alpha * (1.0 + eps);
        pd.push(factor * load.pd_ref);
        qd.push(factor * load.qd_ref);
    }
    (pd, qd)
}

/// A sample index lands in the validation split iff index % 5 == 4 (an
/// exact 80/20 split that is stable under any generation order).
pub fn is_validation(index: u64) -> bool {
    index % 5 == 4
}

pub const ACOPF_LABEL_TOL: f64 = 1e-6;

/// Generates `n_samples` scenarios and labels each with its AC-OPF
/// solution, spreading the solves over `workers` threads. Scenarios whose
/// AC-OPF fails are dropped (counted in `failed`); more than 50% failures
/// aborts.
pub fn generate_dataset(
    case: &GridCase,
    config: &SamplerConfig,
    n_samples: usize,
    seed: u64,
    workers: usize,
) -> Result<Dataset, DatagenError> {
    config.validate()?;
    let workers = workers.max(1);
    let mut results: Vec<Option<Sample>> = vec![None; n_samples];

    let solve_one = |index: u64| -> Option<Sample> {
        let mut rng = sample_rng(seed, index);
        let (pd, qd) = sample_loads(case, config, &mut rng);
        let sol: AcSolution = solve_acopf(case, &pd, &qd, ACOPF_LABEL_TOL).ok()?;
        if !check_ac_feasibility(case, &sol, &pd, &qd).pass(1e-5) {
            return None;
        }
        Some(Sample {
            index,
            pd,
            qd,
            pg: sol.pg,
            qg: sol.qg,
            vm: sol.vm,
            va: sol.va,
            pf: sol.pf,
            qf: sol.qf,
            pt: sol.pt,
            qt: sol.qt,
            objective: sol.objective,
        })
    };

    if workers == 1 {
        for (i, slot) in results.iter_mut().enumerate() {
            *slot = solve_one(i as u64);
        }
    } else {
        let chunks: Vec<Vec<usize>> = (0..workers)
            .map(|w| (w..n_samples).step_by(workers).collect())
            .collect();
        let outputs = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|idxs| {
                    scope.spawn(|| {
                        idxs.iter()
                            .map(|&i| (i, solve_one(i as u64)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect::<Vec<_>>()
        });
        for (i, sample) in outputs {
            results[i] = sample;
        }
    }

    let failed = results.iter().filter(|r| r.is_none()).count();
    let converged = n_samples - failed;
    if n_samples > 0 && converged * 2 < n_samples {
        return Err(DatagenError::TooManyFailures {
            converged,
            attempted: n_samples,
        });
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for sample in results.into_iter().flatten() {
        if is_validation(sample.index) {
            val.push(sample);
        } else {
            train.push(sample);
        }
    }
    Ok(Dataset {
        case_hash: case.hash(),
        seed,
        config: *config,
        attempted: n_samples,
        failed,
        train,
        val,
    })
}

// -- binary format ----------------------------------------------------------
//
//   magic "DC2ACDS1" | u32 version=1 | u32 hash_len, hash bytes | u64 seed |
//   f64 alpha_min, alpha_max, eps_max | u32 attempted, failed |
//   u32 n_load, n_gen, n_bus, n_branch | u32 n_train, n_val |
//   samples (train then val, each: u64 index then all f64 fields LE) |
//   sha256 of everything preceding.

const MAGIC: &[u8; 8] = b"DC2ACDS1";

impl Dataset {
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<(), DatagenError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&(self.case_hash.len() as u32).to_le_bytes());
        buf.extend_from_slice(self.case_hash.as_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        for v in [self.config.alpha_min, self.config.alpha_max, self.config.eps_max] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(self.attempted as u32).to_le_bytes());
        buf.extend_from_slice(&(self.failed as u32).to_le_bytes());
        let dims = self.dims();
        for d in dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.train.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.val.len() as u32).to_le_bytes());
        for sample in self.train.iter().chain(self.val.iter()) {
            buf.extend_from_slice(&sample.index.to_le_bytes());
            for v in sample.fields() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        out.write_all(&buf)?;
        Ok(())
    }

    /// (n_load, n_gen, n_bus, n_branch), zeros when the dataset is empty.
    fn dims(&self) -> [usize; 4] {
        match self.train.first().or_else(|| self.val.first()) {
            Some(s) => [s.pd.len(), s.pg.len(), s.vm.len(), s.pf.len()],
            None => [0; 4],
        }
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self, DatagenError> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        if buf.len() < 8 + 32 || &buf[..8] != MAGIC {
            return Err(DatagenError::Format("missing magic header".into()));
        }
        let (body, sum) = buf.split_at(buf.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(DatagenError::Format("checksum mismatch".into()));
        }
        let mut pos = 8usize;
        let u32_at = |pos: &mut usize| -> Result<u32, DatagenError> {
            let end = *pos + 4;
            if end > body.len() {
                return Err(DatagenError::Format("truncated".into()));
            }
            let v = u32::from_le_bytes(body[*pos..end].try_into().unwrap());
            *pos = end;
            Ok(v)
        };
        let u64_at = |pos: &mut usize| -> Result<u64, DatagenError> {
            let end = *pos + 8;
            if end > body.len() {
                return Err(DatagenError::Format("truncated".into()));
            }
            let v = u64::from_le_bytes(body[*pos..end].try_into().unwrap());
            *pos = end;
            Ok(v)
        };
        let f64_at = |pos: &mut usize| -> Result<f64, DatagenError> {
            Ok(f64::from_bits(u64_at(pos)?))
        };
        let version = u32_at(&mut pos)?;
        if version != 1 {
            return Err(DatagenError::Format(format!("unsupported version {version}")));
        }
        let hash_len = u32_at(&mut pos)? as usize;
        if hash_len > 128 || pos + hash_len > body.len() {
            return Err(DatagenError::Format("bad case hash length".into()));
        }
        let case_hash = String::from_utf8(body[pos..pos + hash_len].to_vec())
            .map_err(|_| DatagenError::Format("case hash is not utf-8".into()))?;
        pos += hash_len;
        let seed = u64_at(&mut pos)?;
        let config = SamplerConfig {
            alpha_min: f64_at(&mut pos)?,
            alpha_max: f64_at(&mut pos)?,
            eps_max: f64_at(&mut pos)?,
        };
        let attempted = u32_at(&mut pos)? as usize;
        let failed = u32_at(&mut pos)? as usize;
        let n_load = u32_at(&mut pos)? as usize;
        let n_gen = u32_at(&mut pos)? as usize;
        let n_bus = u32_at(&mut pos)? as usize;
        let n_branch = u32_at(&mut pos)? as usize;
        let n_train = u32_at(&mut pos)? as usize;
        let n_val = u32_at(&mut pos)? as usize;
        let read_sample = |pos: &mut usize| -> Result<Sample, DatagenError> {
            let index = u64_at(pos)?;
            let mut vecs: [Vec<f64>; 10] = Default::default();
            let lens = [
                n_load, n_load, n_gen, n_gen, n_bus, n_bus, n_branch, n_branch, n_branch, n_branch,
            ];
            for (v, &len) in vecs.iter_mut().zip(&lens) {
                for _ in 0..len {
                    v.push(f64_at(pos)?);
                }
            }
            let [pd, qd, pg, qg, vm, va, pf, qf, pt, qt] = vecs;
            let objective = f64_at(pos)?;
            Ok(Sample {
                index,
                pd,
                qd,
                pg,
                qg,
                vm,
                va,
                pf,
                qf,
                pt,
                qt,
                objective,
            })
        };
        let mut train = Vec::with_capacity(n_train);
        for _ in 0..n_train {
            train.push(read_sample(&mut pos)?);
        }
        let mut val = Vec::with_capacity(n_val);
        for _ in 0..n_val {
            val.push(read_sample(&mut pos)?);
        }
        if pos != body.len() {
            return Err(DatagenError::Format("trailing bytes".into()));
        }
        Ok(Dataset {
            case_hash,
            seed,
            config,
            attempted,
            failed,
            train,
            val,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DatagenError> {
        let mut file = std::fs::File::create(path)?;
        self.write_to(&mut file)?;
        std::fs::write(manifest_path(path), self.manifest())?;
        Ok(())
    }

    /// Loads a dataset, verifying the checksum and (when given) that it was
    /// generated for the expected case.
    pub fn load(path: &Path, expected_case_hash: Option<&str>) -> Result<Self, DatagenError> {
        let mut file = std::fs::File::open(path)?;
        let ds = Self::read_from(&mut file)?;
        if let Some(expected) = expected_case_hash {
            if ds.case_hash != expected {
                return Err(DatagenError::CaseMismatch {
                    expected: expected.to_string(),
                    found: ds.case_hash,
                });
            }
        }
        Ok(ds)
    }

    pub fn manifest(&self) -> String {
        format!(
            "dc2ac dataset manifest\n\
             case_hash = {}\n\
             seed = {}\n\
             alpha = [{}, {}]\n\
             eps_max = {}\n\
             attempted = {}\n\
             failed = {}\n\
             train_samples = {}\n\
             val_samples = {}\n",
            self.case_hash,
            self.seed,
            self.config.alpha_min,
            self.config.alpha_max,
            self.config.eps_max,
            self.attempted,
            self.failed,
            self.train.len(),
            self.val.len()
        )
    }

    /// One CSV row per sample, ordered by sample index, train and val
    /// interleaved as generated. Deterministic bytes for identical data.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<(), DatagenError> {
        let [n_load, n_gen, n_bus, n_branch] = self.dims();
        let mut header = vec!["index".to_string(), "split".to_string()];
        let block = |name: &str, n: usize| (0..n).map(|i| format!("{name}{i}")).collect::<Vec<_>>();
        header.extend(block("pd", n_load));
        header.extend(block("qd", n_load));
        header.extend(block("pg", n_gen));
        header.extend(block("qg", n_gen));
        header.extend(block("vm", n_bus));
        header.extend(block("va", n_bus));
        header.extend(block("pf", n_branch));
        header.extend(block("qf", n_branch));
        header.extend(block("pt", n_branch));
        header.extend(block("qt", n_branch));
        header.push("objective".to_string());
        writeln!(out, "{}", header.join(","))?;
        let mut all: Vec<(&Sample, &str)> = self
            .train
            .iter()
            .map(|s| (s, "train"))
            .chain(self.val.iter().map(|s| (s, "val")))
            .collect();
        all.sort_by_key(|(s, _)| s.index);
        for (s, split) in all {
            let mut row = vec![s.index.to_string(), split.to_string()];
            row.extend(s.fields().map(|v| format!("{v}")));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

impl Sample {
    /// All float fields in serialization order, ending with the objective.
    fn fields(&self) -> impl Iterator<Item = f64> + '_ {
        self.pd
            .iter()
            .chain(&self.qd)
            .chain(&self.pg)
            .chain(&self.qg)
            .chain(&self.vm)
            .chain(&self.va)
            .chain(&self.pf)
            .chain(&self.qf)
            .chain(&self.pt)
            .chain(&self.qt)
            .copied()
            .chain(std::iter::once(self.objective))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::two_bus_case;
    use approx::assert_relative_eq;

    #[test]
    fn sampler_factor_range_and_mean() {
        let case = two_bus_case();
        let config = SamplerConfig::default();
        let mut rng = sample_rng(1, 0);
        let mut sum = 0.0;
        let n = 20_000;
        for _ in 0..n {
            let (pd, qd) = sample_loads(&case, &config, &mut rng);
            let factor = pd[0] / case.loads[0].pd_ref;
            assert!(
                (0.7 * 0.85..=1.1 * 1.15).contains(&factor),
                "factor {factor} outside [0.595, 1.265]"
            );
            // qd uses the identical factor (qd_ref = 0 here, so check value)
            assert_eq!(qd[0], factor * case.loads[0].qd_ref);
            sum += factor;
        }
        let mean = sum / n as f64;
        assert_relative_eq!(mean, 0.9, epsilon = 0.01);
    }

    #[test]
    fn qd_tracks_pd_factor() {
        let mut case = two_bus_case();
        case.loads[0].qd_ref = 0.4;
        let case = case.finalize().unwrap();
        let mut rng = sample_rng(2, 0);
        for _ in 0..100 {
            let (pd, qd) = sample_loads(&case, &SamplerConfig::default(), &mut rng);
            assert_relative_eq!(
                pd[0] / case.loads[0].pd_ref,
                qd[0] / case.loads[0].qd_ref,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn generation_is_deterministic_and_worker_independent() {
        let case = two_bus_case();
        let config = SamplerConfig::default();
        let a = generate_dataset(&case, &config, 20, 42, 1).unwrap();
        let b = generate_dataset(&case, &config, 20, 42, 1).unwrap();
        let c = generate_dataset(&case, &config, 20, 42, 3).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.train, c.train);
        assert_eq!(a.val, c.val);
        // different seed gives different samples
        let d = generate_dataset(&case, &config, 20, 43, 1).unwrap();
        assert_ne!(a.train[0].pd, d.train[0].pd);
    }

    #[test]
    fn split_is_eighty_twenty() {
        let case = two_bus_case();
        let ds = generate_dataset(&case, &SamplerConfig::default(), 50, 7, 2).unwrap();
        assert_eq!(ds.attempted, 50);
        assert_eq!(ds.failed, 0);
        assert_eq!(ds.val.len(), 10);
        assert_eq!(ds.train.len(), 40);
        assert!(ds.val.iter().all(|s| s.index % 5 == 4));
    }

    #[test]
    fn labels_are_feasible_acopf_solutions() {
        let case = two_bus_case();
        let ds = generate_dataset(&case, &SamplerConfig::default(), 10, 3, 1).unwrap();
        for s in ds.train.iter().chain(&ds.val) {
            let sol = crate::acopf::AcSolution {
                pg: s.pg.clone(),
                qg: s.qg.clone(),
                vm: s.vm.clone(),
                va: s.va.clone(),
                pf: s.pf.clone(),
                qf: s.qf.clone(),
                pt: s.pt.clone(),
                qt: s.qt.clone(),
                objective: s.objective,
                kkt_residual: 0.0,
            };
            assert!(check_ac_feasibility(&case, &sol, &s.pd, &s.qd).pass(1e-5));
        }
    }

    #[test]
    fn hopeless_case_aborts() {
        let mut case = two_bus_case();
        // line far too small for the sampled load range
        case.branches[0].s_max = 0.05;
        let case = case.finalize().unwrap();
        let err = generate_dataset(&case, &SamplerConfig::default(), 8, 1, 1);
        assert!(matches!(err, Err(DatagenError::TooManyFailures { .. })));
    }

    #[test]
    fn file_round_trip_and_guards() {
        let case = two_bus_case();
        let ds = generate_dataset(&case, &SamplerConfig::default(), 12, 9, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.ds");
        ds.save(&path).unwrap();
        assert!(manifest_path(&path).exists());
        let back = Dataset::load(&path, Some(&case.hash())).unwrap();
        assert_eq!(ds.train, back.train);
        assert_eq!(ds.val, back.val);
        assert_eq!(ds.seed, back.seed);
        assert_eq!(ds.config, back.config);
        // wrong case hash is rejected
        assert!(matches!(
            Dataset::load(&path, Some("deadbeef")),
            Err(DatagenError::CaseMismatch { .. })
        ));
        // corrupted byte is rejected
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Dataset::load(&path, None),
            Err(DatagenError::Format(_))
        ));
    }

    #[test]
    fn csv_bytes_are_deterministic() {
        let case = two_bus_case();
        let ds = generate_dataset(&case, &SamplerConfig::default(), 10, 5, 1).unwrap();
        let ds2 = generate_dataset(&case, &SamplerConfig::default(), 10, 5, 4).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        ds.write_csv(&mut a).unwrap();
        ds2.write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("index,split,pd0,qd0,pg0"));
        assert_eq!(text.lines().count(), 11);
    }
}

/// `data.ds` -> `data.ds.manifest.txt`
pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".manifest.txt");
    std::path::PathBuf::from(s)
}
