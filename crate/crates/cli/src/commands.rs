use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssconv::diagnostics::{self, random_input};
use ssconv::kernel::{build_basis, write_basis_csv, BasisSpec};
use ssconv::layers::Network;
use ssconv::pipeline::{
    eval_scenes, scene_errors, summarize, train as run_training, Checkpoint, EstimatorRegistry, EvalSettings, ADD_THRESHOLD,
    TrainConfig, DEFAULT_BACKBONE,
};
use ssconv::tensor::{self as io, voxelize, PointCloud, SparseTensor};
use thiserror::Error;

use crate::{BenchArgs, ConvertArgs, EquivarianceArgs, EvalArgs, KernelDumpArgs, TrainArgs};

#[derive(Debug, Error)]
pub enum Failure {
    /// A check ran and did not pass; carries the full report.
    #[error("check failed")]
    Check(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl From<ssconv::Error> for Failure {
    fn from(e: ssconv::Error) -> Self {
        match e {
            ssconv::Error::Io(io) => Failure::Io(io.to_string()),
            ssconv::Error::Divergence { .. } => Failure::Check(format!("status=fail\nreason={e}\n")),
            other => Failure::Usage(other.to_string()),
        }
    }
}

type Outcome = Result<String, Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn load_network(config: Option<&PathBuf>, seed: u64) -> Result<Network, Failure> {
    let text = match config {
        Some(p) => read_text(p)?,
        None => DEFAULT_BACKBONE.to_string(),
    };
    Ok(Network::from_config(&text, None, seed)?)
}

fn finish(report: String, pass: bool) -> Outcome {
    let report = format!("{report}status={}\n", if pass { "pass" } else { "fail" });
    if pass {
        Ok(report)
    } else {
        Err(Failure::Check(report))
    }
}

pub fn check_equivariance(a: &EquivarianceArgs) -> Outcome {
    let mut net = load_network(a.config.as_ref(), a.seed)?;
    if let Some(scale) = a.debug_break_kernel {
        net.break_equivariance(a.seed ^ 0xB8EA_4C0D, scale);
    }
    let inputs: Vec<SparseTensor> = if a.empty_input {
        vec![SparseTensor::empty(net.field_in().clone(), Default::default())]
    } else {
        if !(a.occupancy > 0.0 && a.occupancy <= 1.0) {
            return Err(Failure::Usage(format!("occupancy must be in (0, 1], got {}", a.occupancy)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        (0..a.inputs).map(|_| random_input(&mut rng, net.field_in(), a.grid, a.occupancy)).collect()
    };
    let r = diagnostics::check_equivariance(&net, &inputs, a.continuous, a.seed)?;
    let mut out = String::new();
    writeln!(out, "layers={}", net.layers().len()).unwrap();
    writeln!(out, "params={}", net.num_params()).unwrap();
    writeln!(out, "inputs={}", r.inputs).unwrap();
    writeln!(out, "rotations={}", r.rotations).unwrap();
    writeln!(out, "octahedral_max_error={:e}", r.octahedral_max).unwrap();
    writeln!(out, "tolerance={:e}", a.tolerance).unwrap();
    writeln!(out, "continuous_samples={}", r.continuous.len()).unwrap();
    writeln!(out, "continuous_mean_error={:e}", r.continuous_mean()).unwrap();
    writeln!(out, "continuous_max_error={:e}", r.continuous_max()).unwrap();
    finish(out, r.octahedral_max <= a.tolerance)
}

pub fn bench(a: &BenchArgs) -> Outcome {
    let net = load_network(a.config.as_ref(), a.seed)?;
    let r = diagnostics::bench(&net, a.occupancy, a.grid, a.batch, a.repeats, a.seed)?;
    let mut out = String::new();
    writeln!(out, "grid={}", a.grid).unwrap();
    writeln!(out, "occupancy={}", a.occupancy).unwrap();
    writeln!(out, "batch={}", a.batch).unwrap();
    writeln!(out, "repeats={}", a.repeats).unwrap();
    writeln!(out, "active_sites={}", r.active_sites).unwrap();
    writeln!(out, "rule_pairs={}", r.pairs).unwrap();
    writeln!(out, "sparse_macs={}", r.macs).unwrap();
    writeln!(out, "expected_macs={}", r.macs_expected).unwrap();
    writeln!(out, "macs_identity={}", r.macs_identity_holds()).unwrap();
    writeln!(out, "dense_macs={}", r.dense_macs).unwrap();
    writeln!(out, "dense_cells={}", r.dense_cells).unwrap();
    writeln!(out, "max_deviation={:e}", r.max_deviation).unwrap();
    writeln!(out, "sparse_peak_bytes={}", r.sparse_peak_bytes).unwrap();
    writeln!(out, "dense_peak_bytes={}", r.dense_peak_bytes).unwrap();
    writeln!(out, "sparse_seconds={:.6}", r.sparse_seconds).unwrap();
    writeln!(out, "dense_seconds={:.6}", r.dense_seconds).unwrap();
    writeln!(out, "speedup={:.3}", r.speedup()).unwrap();
    let fast_enough = a.min_speedup.is_none_or(|m| r.speedup() >= m);
    finish(out, r.macs_identity_holds() && r.max_deviation < 1e-9 && fast_enough)
}

pub fn kernel_dump(a: &KernelDumpArgs) -> Outcome {
    let mut spec = BasisSpec::with_size(a.size);
    if let Some(m) = &a.m {
        spec.centers = m.clone();
    }
    if let Some(eps) = a.eps {
        spec.epsilon = eps;
    }
    let basis = build_basis(a.k, a.l, &spec)?;
    write_file(&a.out, write_basis_csv(&basis).as_bytes())?;
    let orders: Vec<String> = basis.orders().iter().map(u32::to_string).collect();
    let mut out = String::new();
    writeln!(out, "k={}", a.k).unwrap();
    writeln!(out, "l={}", a.l).unwrap();
    writeln!(out, "size={}", spec.size).unwrap();
    writeln!(out, "radial={}", spec.num_radial()).unwrap();
    writeln!(out, "orders={}", orders.join(",")).unwrap();
    writeln!(out, "blocks={}", spec.num_radial() * orders.len() * a.size.pow(3)).unwrap();
    writeln!(out, "out={}", a.out.display()).unwrap();
    Ok(out)
}

/// Training config and the directory its relative paths resolve against.
fn load_train_config(path: Option<&PathBuf>) -> Result<(TrainConfig, PathBuf), Failure> {
    match path {
        None => Ok((TrainConfig::default(), PathBuf::from("."))),
        Some(p) => {
            let cfg = TrainConfig::from_toml(&read_text(p)?)?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((cfg, base))
        }
    }
}

pub fn train(a: &TrainArgs) -> Outcome {
    let (mut cfg, base) = load_train_config(a.config.as_ref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.iters {
        cfg.iters = n;
    }
    let model_config = cfg.model_config(&base)?;
    let log_every = a.log_every;
    let (model, report) = run_training(&cfg, model_config, |it, loss| {
        if log_every > 0 && (it + 1) % log_every == 0 {
            eprintln!("iter={} loss_stage1={:.6} loss_stage2={:.6}", it + 1, loss.stage1, loss.stage2);
        }
    })?;
    let bytes = Checkpoint::from_model(&model).to_bytes();
    write_file(&a.out, &bytes)?;
    let mut out = String::new();
    writeln!(out, "seed={}", cfg.seed).unwrap();
    writeln!(out, "iters={}", cfg.iters).unwrap();
    writeln!(out, "params={}", model.num_params()).unwrap();
    if let Some(last) = report.losses.last() {
        writeln!(out, "final_loss_stage1={:.9}", last.stage1).unwrap();
        writeln!(out, "final_loss_stage2={:.9}", last.stage2).unwrap();
    }
    writeln!(out, "checkpoint={}", a.out.display()).unwrap();
    writeln!(out, "checkpoint_bytes={}", bytes.len()).unwrap();
    Ok(out)
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let (cfg, base) = load_train_config(a.config.as_ref())?;
    let model = match &a.checkpoint {
        None => None,
        Some(p) => {
            let mut file = fs::File::open(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
            let ckpt = Checkpoint::read_from(&mut file)?;
            let expected = match &a.config {
                Some(_) => Some(cfg.model_config(&base)?),
                None => None,
            };
            Some(Arc::new(ckpt.into_model(expected.as_ref())?))
        }
    };
    let estimator = EstimatorRegistry::default().build(&a.estimator, model.clone())?;
    let refine = a.refine_iters.unwrap_or(cfg.refine_iters);
    let settings = EvalSettings {
        num_scenes: a.scenes,
        seed: a.seed,
        num_points: cfg.num_points,
        noise_sigma: cfg.noise_sigma,
    };
    let scenes = eval_scenes(&settings)?;
    let mut out = String::new();
    writeln!(out, "estimator={}", estimator.name()).unwrap();
    writeln!(out, "seed={}", a.seed).unwrap();
    writeln!(out, "refine_iters={refine}").unwrap();
    if a.sweep {
        for r in 0..refine {
            let m = summarize(&scene_errors(estimator.as_ref(), &scenes, r)?);
            for line in m.to_kv().lines().filter(|l| !l.starts_with("scenes=")) {
                writeln!(out, "round{r}.{line}").unwrap();
            }
        }
    }
    let errors = scene_errors(estimator.as_ref(), &scenes, refine)?;
    out.push_str(&summarize(&errors).to_kv());
    if let Some(path) = &a.csv {
        let mut csv = String::from("scene,shape,rotation_deg,translation,translation_rel,add,add_pass\n");
        for (i, (s, e)) in scenes.iter().zip(&errors).enumerate() {
            writeln!(
                csv,
                "{i},{},{:.9},{:.9},{:.9},{:.9},{}",
                s.shape_id,
                e.rotation_deg,
                e.translation,
                e.translation / e.diameter,
                e.add,
                e.add < ADD_THRESHOLD * e.diameter
            )
            .unwrap();
        }
        write_file(path, csv.as_bytes())?;
        writeln!(out, "csv={}", path.display()).unwrap();
    }
    Ok(out)
}

/// A file read by `convert`, detected from its leading bytes.
enum Loaded {
    Cloud(PointCloud),
    Tensor(SparseTensor),
}

fn load_any(path: &Path) -> Result<Loaded, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    if bytes.starts_with(io::SSTF_MAGIC) {
        return Ok(Loaded::Tensor(io::deserialize(&bytes)?));
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| Failure::Usage(format!("{}: neither SSTF nor a text point cloud", path.display())))?;
    Ok(Loaded::Cloud(io::parse_point_cloud(&text)?))
}

/// Site centers with their features as attributes.
fn tensor_to_cloud(t: &SparseTensor) -> PointCloud {
    let points = t.sites().iter().map(|s| t.grid().center_of(*s)).collect();
    PointCloud::new(points, t.features().clone()).expect("one row per site")
}

pub fn convert(a: &ConvertArgs) -> Outcome {
    let to_sstf = a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("sstf"));
    let loaded = load_any(&a.input)?;
    let mut out = String::new();
    let (bytes, sites, channels) = match (loaded, to_sstf) {
        (Loaded::Cloud(pc), true) => {
            writeln!(out, "input_format=ascii\npoints={}", pc.len()).unwrap();
            let t = voxelize(&pc, a.resolution, true)?;
            writeln!(out, "resolution={}", a.resolution).unwrap();
            (io::serialize(&t), t.num_sites(), t.field_type().dim())
        }
        (Loaded::Cloud(pc), false) => {
            writeln!(out, "input_format=ascii\npoints={}", pc.len()).unwrap();
            let n = pc.len();
            (io::write_point_cloud(&pc).into_bytes(), n, pc.num_attributes())
        }
        (Loaded::Tensor(t), true) => {
            writeln!(out, "input_format=sstf").unwrap();
            (io::serialize(&t), t.num_sites(), t.field_type().dim())
        }
        (Loaded::Tensor(t), false) => {
            writeln!(out, "input_format=sstf").unwrap();
            (io::write_point_cloud(&tensor_to_cloud(&t)).into_bytes(), t.num_sites(), t.field_type().dim())
        }
    };
    write_file(&a.out, &bytes)?;
    writeln!(out, "output_format={}", if to_sstf { "sstf" } else { "ascii" }).unwrap();
    writeln!(out, "{}={sites}", if to_sstf { "sites" } else { "rows" }).unwrap();
    writeln!(out, "channels={channels}").unwrap();
    writeln!(out, "out={}", a.out.display()).unwrap();
    Ok(out)
}
