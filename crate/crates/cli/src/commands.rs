use std::path::{Path, PathBuf};

use aliknet::error::{Error, Result};
use aliknet::io::{
    error_pgm, load_checkpoint, load_dataset, load_sample, magnitude_pgm, read_tensor, save_checkpoint, save_dataset,
    write_tensor, DType, RunConfig,
};
use aliknet::metrics::MetricReport;
use aliknet::mri::{generate_mask, make_dataset, Dims};
use aliknet::network::{Network, NetworkConfig};
use aliknet::tensor::Rng;
use aliknet::training::{grad_check, reconstruct, train, Adam, GradTarget};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aliknet", version, about = "Dynamic MRI reconstruction with an unrolled low-rank, image and k-space network")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom dataset directory
    Phantom(PhantomArgs),
    /// Write a sampling mask tensor
    Mask(MaskArgs),
    /// Train a network from a run configuration
    Train(TrainArgs),
    /// Reconstruct one sample with a checkpoint
    Recon(ReconArgs),
    /// Compare a reconstruction with a reference
    Eval(EvalArgs),
    /// Check backward passes against finite differences
    Gradcheck(GradcheckArgs),
    /// Render magnitude and error images as binary graymaps
    Figure(FigureArgs),
}

#[derive(Args)]
struct DimsArgs {
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    nx: usize,
    #[arg(long, default_value_t = 32)]
    ny: usize,
    #[arg(long, default_value_t = 4)]
    coils: usize,
}

impl DimsArgs {
    fn dims(&self) -> Dims {
        Dims {
            frames: self.frames,
            nx: self.nx,
            ny: self.ny,
            coils: self.coils,
        }
    }
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[command(flatten)]
    dims: DimsArgs,
    #[arg(long, default_value_t = 2.0)]
    accel_min: f64,
    #[arg(long, default_value_t = 8.0)]
    accel_max: f64,
    #[arg(long, default_value_t = 4)]
    center_lines: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MaskArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    lines: usize,
    #[arg(long)]
    accel: f64,
    #[arg(long, default_value_t = 4)]
    center_lines: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the component switches with a named variant (A-INet, A-KNet,
    /// A-LINet, A-IKNet, LIKNet, A-LIKNet)
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Args)]
struct ReconArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    sample: PathBuf,
    /// Directory for image.ctns and kspace.ctns
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    /// Reference tensor file, or a sample directory
    #[arg(long)]
    reference: PathBuf,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Target name, or "all"
    #[arg(long, default_value = "all")]
    target: String,
    #[arg(long, default_value_t = 4)]
    frames: usize,
    #[arg(long, default_value_t = 8)]
    nx: usize,
    #[arg(long, default_value_t = 8)]
    ny: usize,
    #[arg(long, default_value_t = 2)]
    coils: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

#[derive(Args)]
struct FigureArgs {
    /// Image tensor file, or a sample directory (its reference is drawn)
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reference for the error map
    #[arg(long, requires = "error_out")]
    reference: Option<PathBuf>,
    #[arg(long, requires = "reference")]
    error_out: Option<PathBuf>,
    /// Divide magnitudes by their maximum
    #[arg(long)]
    normalize: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom(a) => phantom(a),
        Command::Mask(a) => mask(a),
        Command::Train(a) => train_cmd(a),
        Command::Recon(a) => recon(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Figure(a) => figure(a),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn phantom(a: PhantomArgs) -> Result<()> {
    let data = make_dataset(a.count, a.dims.dims(), (a.accel_min, a.accel_max), a.center_lines, a.seed)?;
    save_dataset(&a.out, &data)?;
    println!("wrote {} samples to {}", data.len(), a.out.display());
    Ok(())
}

fn mask(a: MaskArgs) -> Result<()> {
    let m = generate_mask(a.frames, a.lines, a.accel, a.center_lines, &mut Rng::new(a.seed))?;
    write_tensor(&a.out, &m.to_tensor(), DType::Complex64)?;
    println!("acceleration {:.4}", m.acceleration());
    Ok(())
}

/// Network initialization draws from a stream separate from the training one.
fn init_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &a.variant {
        let preset = NetworkConfig::variant(v)?;
        cfg.network.image_net = preset.image_net;
        cfg.network.lowrank = preset.lowrank;
        cfg.network.kspace_net = preset.kspace_net;
        cfg.network.attention = preset.attention;
        cfg.network.isl = preset.isl;
    }
    cfg.validate()?;
    let data = load_dataset(&cfg.paths.train_data)?;
    let heldout = if cfg.paths.heldout_data.join("dataset.toml").exists() {
        load_dataset(&cfg.paths.heldout_data)?
    } else {
        Vec::new()
    };
    for s in data.iter().chain(&heldout) {
        if s.dims() != cfg.dims {
            return Err(Error::config(format!(
                "dataset dims {:?} differ from configured {:?}",
                s.dims(),
                cfg.dims
            )));
        }
    }
    let mut net = Network::init(cfg.network.clone(), cfg.dims, &mut Rng::new(init_seed(cfg.training.seed)))?;
    let mut opt = Adam::new(&net, cfg.training.lr);
    let ck_dir = cfg.paths.checkpoint.clone();
    let echo = cfg.to_toml()?;
    let final_step = cfg.training.steps;
    let mut save = |step: usize, n: &Network, o: &Adam| -> Result<()> {
        let dir = if step == final_step {
            ck_dir.clone()
        } else {
            ck_dir.with_file_name(format!(
                "{}-step{step:06}",
                ck_dir.file_name().map_or("checkpoint".into(), |s| s.to_string_lossy())
            ))
        };
        save_checkpoint(&dir, n, o, step)?;
        write_file(&dir.join("config.toml"), echo.as_bytes())
    };
    let log = train(&mut net, &mut opt, &data, &heldout, &cfg.training, &mut save)?;
    write_file(&cfg.paths.log, log.to_csv().as_bytes())?;
    let ma = log.moving_average(200);
    let mut summary = format!(
        "steps = {}\nparameters = {}\nfinal_moving_average_loss = {:e}\n",
        cfg.training.steps,
        aliknet::nn::Params::count_params(&net),
        ma.last().copied().unwrap_or(f64::NAN)
    );
    for (step, e) in &log.validation {
        summary.push_str(&format!(
            "\n[[validation]]\nstep = {step}\npsnr_db = {:e}\nssim = {:e}\nnrmse = {:e}\nzero_filled_psnr_db = {:e}\nzero_filled_ssim = {:e}\nzero_filled_nrmse = {:e}\nsample_psnr_db = {:?}\n",
            e.psnr_db, e.ssim, e.nrmse, e.zero_filled_psnr_db, e.zero_filled_ssim, e.zero_filled_nrmse, e.sample_psnr_db
        ));
    }
    write_file(&cfg.paths.log.with_extension("toml"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

fn recon(a: ReconArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let s = load_sample(&a.sample)?;
    if s.dims() != ck.network.dims {
        return Err(Error::shape(&s.dims().kspace(), &ck.network.dims.kspace(), "sample vs checkpoint"));
    }
    let out = reconstruct(&ck.network, &s)?;
    write_tensor(&a.out.join("image.ctns"), &out.x, DType::Complex64)?;
    write_tensor(&a.out.join("kspace.ctns"), &out.y, DType::Complex64)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn image_input(path: &Path) -> Result<aliknet::tensor::ComplexTensor> {
    if path.is_dir() {
        read_tensor(&path.join("reference.ctns"))
    } else {
        read_tensor(path)
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let pred = image_input(&a.pred)?;
    let reference = image_input(&a.reference)?;
    let report = MetricReport::compute(&pred, &reference)?;
    let text = toml::to_string(&report).map_err(|e| Error::config(e.to_string()))?;
    match &a.out {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let targets: Vec<GradTarget> = if a.target == "all" {
        GradTarget::ALL.to_vec()
    } else {
        vec![a.target.parse()?]
    };
    let dims = Dims {
        frames: a.frames,
        nx: a.nx,
        ny: a.ny,
        coils: a.coils,
    };
    let mut rng = Rng::new(a.seed);
    let mut failed = 0;
    for t in targets {
        let report = grad_check(t, dims, &mut rng)?;
        for (name, err) in &report.entries {
            let ok = *err < a.tolerance;
            failed += usize::from(!ok);
            println!("{:<10} {:<56} {:.3e} {}", t.name(), name, err, if ok { "ok" } else { "FAIL" });
        }
    }
    println!("{failed} group(s) above tolerance {:e}", a.tolerance);
    Ok(())
}

fn figure(a: FigureArgs) -> Result<()> {
    let img = image_input(&a.image)?;
    write_file(&a.out, &magnitude_pgm(&img, a.normalize)?)?;
    if let (Some(r), Some(out)) = (&a.reference, &a.error_out) {
        write_file(out, &error_pgm(&img, &image_input(r)?)?)?;
    }
    Ok(())
}
