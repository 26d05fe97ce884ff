use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pufbnn::attack::{eval_with_wrong_key, eval_without_key, report_tables, tables_csv, tables_text};
use pufbnn::bnn::{predict_all, BipolarVec, EncodedSet};
use pufbnn::crossbar::{crossbar_forward, CrossbarModel, DeviceModel};
use pufbnn::format::{load_any, load_model, load_protected, save_model, save_protected, ModelFile};
use pufbnn::protection::{protect, Challenge, KeyMode, PufDevice, SchemeId};
use pufbnn::trainer::{
    binarize_input, finalize, load_mnist, parse_idx_images, train_ste, Split, TrainConfig, IMAGES_MAGIC,
};
use pufbnn::Error;

/// Binarized networks on PUF-keyed weights: training, protection,
/// crossbar simulation and attack evaluation.
#[derive(Parser)]
#[command(name = "pufbnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a 784-512-512-512-10 network on MNIST and write a .bnnm file.
    Train(TrainArgs),
    /// Manage device files.
    #[command(subcommand)]
    Device(DeviceCommand),
    /// Transform a plain model with keys from a device and write a .bnnp file.
    Protect(ProtectArgs),
    /// Classify one image.
    Infer(InferArgs),
    /// Accuracy of a protected model without its key and with corrupted keys.
    AttackEval(AttackArgs),
    /// No-key accuracy for every scheme and protected-layer choice.
    Tables(TablesArgs),
    /// Check that a protected model with its device predicts exactly like the plain model.
    Verify(VerifyArgs),
}

#[derive(Subcommand)]
enum DeviceCommand {
    /// Write a new 32-byte device file.
    New {
        #[arg(long)]
        out: PathBuf,
        /// Derive the secret from this seed instead of OS entropy (tests only).
        #[arg(long)]
        seed: Option<u64>,
        /// Replace an existing file.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Directory with the MNIST IDX files (plain or .gz).
    #[arg(long, alias = "dataset", default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Use only the first N test samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Pixel binarization threshold in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    t_pix: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, alias = "dataset", default_value = "data/mnist")]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f32,
    /// Multiply the learning rate by --lr-decay every this many epochs.
    #[arg(long, default_value_t = 3)]
    lr_decay_every: usize,
    #[arg(long, default_value_t = 0.5)]
    lr_decay: f32,
    #[arg(long, default_value_t = 0.5)]
    t_pix: f64,
    /// Train on the first N training samples only.
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Independent,
    Reuse,
}

#[derive(Args)]
struct ProtectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    device: PathBuf,
    /// Challenge bytes as hex; stored in the output file.
    #[arg(long)]
    challenge: String,
    /// rows | cols | rowinv-colswap (also rowinv, colinv, rowswap, colswap, none).
    #[arg(long)]
    scheme: SchemeId,
    /// Comma-separated 1-based hidden layers, or "all".
    #[arg(long, default_value = "all")]
    layers: String,
    #[arg(long, value_enum, default_value = "independent")]
    key_mode: ModeArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Digital,
    Crossbar,
    Both,
}

#[derive(Args)]
struct CrossbarArgs {
    /// On-state conductance (arbitrary units).
    #[arg(long, default_value_t = 1.0)]
    g_on: f64,
    /// Off-state conductance; 0 means an infinite on/off ratio.
    #[arg(long, default_value_t = 0.05)]
    g_off: f64,
    /// Log-normal spread of cell conductances.
    #[arg(long, default_value_t = 0.0)]
    sigma_rel: f64,
    /// Seed for the conductance variation.
    #[arg(long, default_value_t = 0)]
    device_seed: u64,
}

impl CrossbarArgs {
    fn device_model(&self) -> pufbnn::Result<DeviceModel> {
        DeviceModel::new(self.g_on, self.g_off, self.sigma_rel, self.device_seed)
    }
}

#[derive(Args)]
struct InferArgs {
    /// A .bnnm or .bnnp file.
    #[arg(long)]
    model: PathBuf,
    /// Device file; without it a protected model runs on its stored weights as is.
    #[arg(long)]
    device: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "digital")]
    backend: Backend,
    /// IDX image file, binary PGM (P5) or 784 raw bytes.
    #[arg(long)]
    input: PathBuf,
    /// Image index within an IDX file.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 0.5)]
    t_pix: f64,
    #[command(flatten)]
    crossbar: CrossbarArgs,
}

#[derive(Args)]
struct AttackArgs {
    /// A .bnnp file.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Device file; enables the corrupted-key trials.
    #[arg(long)]
    device: Option<PathBuf>,
    /// Trials per corrupted-key setting.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TablesArgs {
    /// A plain .bnnm file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    device: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Key seeds (challenges) per table cell.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Aligned text output; printed to stdout when omitted.
    #[arg(long)]
    text: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// A .bnnp file.
    #[arg(long)]
    model: PathBuf,
    /// The plain .bnnm model it was made from.
    #[arg(long)]
    plain: PathBuf,
    #[arg(long)]
    device: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "both")]
    backend: Backend,
    #[command(flatten)]
    crossbar: CrossbarArgs,
}

enum Failure {
    Lib(Error),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Device(DeviceCommand::New { out, seed, force }) => device_new(&out, seed, force),
        Command::Protect(a) => protect_cmd(a),
        Command::Infer(a) => infer(a),
        Command::AttackEval(a) => attack_eval(a),
        Command::Tables(a) => tables(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e @ Error::InvalidArgument(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(4)
        }
    }
}

fn test_set(data: &DataArgs) -> pufbnn::Result<EncodedSet> {
    let set = load_mnist(&data.data_dir, Split::Test)?.binarize(data.t_pix);
    Ok(match data.limit {
        Some(n) => set.truncated(n),
        None => set,
    })
}

fn load_device(path: &Path) -> pufbnn::Result<PufDevice> {
    PufDevice::from_bytes(&fs::read(path)?)
}

fn train(a: TrainArgs) -> CliResult {
    let config = TrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        lr_decay: a.lr_decay,
        lr_decay_every: a.lr_decay_every,
        t_pix: a.t_pix,
        ..TrainConfig::default()
    };
    let mut train = load_mnist(&a.data_dir, Split::Train)?;
    if let Some(n) = a.train_limit {
        train = train.truncated(n);
    }
    let train = train.binarize(a.t_pix);
    let test = load_mnist(&a.data_dir, Split::Test)?.binarize(a.t_pix);
    let outcome = train_ste(&config, &train, &test, |s| {
        eprintln!(
            "epoch {:>2}  lr {:.2e}  loss {:.4}  test {:.2}%",
            s.epoch,
            s.learning_rate,
            s.train_loss,
            100.0 * s.test_accuracy
        )
    })?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let model = finalize(&outcome.shadow)?;
    save_model(&a.out, &model)?;
    let acc = outcome.history.last().map_or(0.0, |s| s.test_accuracy);
    println!("test accuracy {:.2}%", 100.0 * acc);
    Ok(())
}

fn device_new(out: &Path, seed: Option<u64>, force: bool) -> CliResult {
    if out.exists() && !force {
        return Err(Error::InvalidArgument(format!("{} exists; pass --force to replace it", out.display())).into());
    }
    let device = match seed {
        Some(s) => PufDevice::generate(&mut ChaCha8Rng::seed_from_u64(s)),
        None => PufDevice::generate(&mut rand::rngs::OsRng),
    };
    fs::write(out, device.to_bytes())?;
    Ok(())
}

fn parse_layers(spec: &str, hidden: usize) -> pufbnn::Result<Vec<bool>> {
    if spec == "all" {
        return Ok(vec![true; hidden]);
    }
    let mut on = vec![false; hidden];
    for part in spec.split(',') {
        let i: usize = part
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad layer {part:?}")))?;
        if i == 0 || i > hidden {
            return Err(Error::InvalidArgument(format!("layer {i} outside 1..={hidden}")));
        }
        on[i - 1] = true;
    }
    Ok(on)
}

fn protect_cmd(a: ProtectArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let device = load_device(&a.device)?;
    let challenge = Challenge::from_hex(&a.challenge)?;
    let schemes: Vec<SchemeId> = parse_layers(&a.layers, model.hidden().len())?
        .into_iter()
        .map(|on| if on { a.scheme } else { SchemeId::None })
        .collect();
    let mode = match a.key_mode {
        ModeArg::Independent => KeyMode::Independent,
        ModeArg::Reuse => KeyMode::Reuse,
    };
    let pm = protect(&model, &device, challenge, &schemes, mode)?;
    save_protected(&a.out, &pm)?;
    println!("key length {} = {} bits", pm.key_length_formula(), pm.key_length_bits());
    Ok(())
}

fn read_image(path: &Path, index: usize) -> pufbnn::Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    if bytes.len() >= 4 && u32::from_be_bytes(bytes[..4].try_into().unwrap()) == IMAGES_MAGIC {
        let (count, rows, cols, pixels) = parse_idx_images(&bytes)?;
        if index >= count {
            return Err(Error::InvalidArgument(format!(
                "index {index} but the file holds {count} images"
            )));
        }
        let size = rows * cols;
        return Ok(pixels[index * size..(index + 1) * size].to_vec());
    }
    if bytes.starts_with(b"P5") {
        let text = String::from_utf8_lossy(&bytes[..bytes.len().min(64)]).into_owned();
        let fields: Vec<&str> = text.split_ascii_whitespace().take(4).collect();
        if fields.len() == 4 && fields[3] == "255" {
            let (w, h): (usize, usize) = (fields[1].parse().unwrap_or(0), fields[2].parse().unwrap_or(0));
            if w * h > 0 && bytes.len() >= w * h {
                return Ok(bytes[bytes.len() - w * h..].to_vec());
            }
        }
        return Err(Error::Format(format!("{}: unsupported PGM header", path.display())));
    }
    Ok(bytes)
}

fn infer(a: InferArgs) -> CliResult {
    let pixels = read_image(&a.input, a.index)?;
    let x = binarize_input(&pixels, a.t_pix);
    let device_model = a.crossbar.device_model()?;
    let class = match load_any(&a.model)? {
        ModelFile::Plain(model) => match a.backend {
            Backend::Crossbar => crossbar_forward(&CrossbarModel::map(&model, &device_model), &x, None)?,
            _ => model.forward(&x)?,
        },
        ModelFile::Protected(pm) => {
            let schedule = match &a.device {
                Some(p) => Some(pm.schedule(&load_device(p)?)?),
                None => {
                    eprintln!("warning: no device given; running the stored weights without a key");
                    None
                }
            };
            match (a.backend, &schedule) {
                (Backend::Crossbar, s) => {
                    let xb = CrossbarModel::map(pm.stored_model(), &device_model);
                    crossbar_forward(&xb, &x, s.as_ref().map(|s| s.keys()))?
                }
                (_, Some(s)) => pm.unlock_with(s.clone()).forward(&x)?,
                (_, None) => pm.stored_model().forward(&x)?,
            }
        }
    };
    println!("{class}");
    Ok(())
}

fn attack_eval(a: AttackArgs) -> CliResult {
    let pm = load_protected(&a.model)?;
    let set = test_set(&a.data)?;
    let mut csv = String::from("attack,flipped_bits,accuracy_mean,accuracy_min,accuracy_max,trials\n");
    let acc = eval_without_key(&pm, &set)?;
    csv.push_str(&format!("no-key,,{acc:.6},{acc:.6},{acc:.6},1\n"));
    println!("without key: {:.2}%", 100.0 * acc);
    if let Some(path) = &a.device {
        let device = load_device(path)?;
        let total = pm.key_length_bits();
        let mut flips: Vec<usize> = [1, 8, 64].into_iter().filter(|&f| f < total).collect();
        flips.push(total);
        for f in flips {
            let s = eval_with_wrong_key(&pm, &device, &set, f, a.seeds, a.seed)?;
            csv.push_str(&format!(
                "wrong-key,{f},{:.6},{:.6},{:.6},{}\n",
                s.mean, s.min, s.max, s.trials
            ));
            println!(
                "{f:>5} flipped key bits: {:.2}% (min {:.2}%, max {:.2}%)",
                100.0 * s.mean,
                100.0 * s.min,
                100.0 * s.max
            );
        }
    }
    fs::write(&a.out, csv)?;
    Ok(())
}

fn tables(a: TablesArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let device = load_device(&a.device)?;
    let set = test_set(&a.data)?;
    let rows = report_tables(&model, &device, &set, a.seeds)?;
    fs::write(&a.out, tables_csv(&rows))?;
    let text = tables_text(&rows);
    match &a.text {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn verify(a: VerifyArgs) -> CliResult {
    let pm = load_protected(&a.model)?;
    let plain = load_model(&a.plain)?;
    let device = load_device(&a.device)?;
    let set = test_set(&a.data)?;
    let expected = predict_all(&plain, &set)?;
    let schedule = pm.schedule(&device)?;
    let compare = |name: &str, got: Vec<usize>| -> CliResult {
        let mismatches = got.iter().zip(&expected).filter(|(a, b)| a != b).count();
        if mismatches > 0 {
            return Err(Failure::Verification(format!(
                "{name}: {mismatches} of {} predictions differ from the plain model",
                expected.len()
            )));
        }
        println!("{name}: {} of {} predictions match", expected.len(), expected.len());
        Ok(())
    };
    if a.backend != Backend::Crossbar {
        compare("digital", predict_all(&pm.unlock_with(schedule.clone()), &set)?)?;
    }
    if a.backend != Backend::Digital {
        let xb = CrossbarModel::map(pm.stored_model(), &a.crossbar.device_model()?);
        let keyed = |x: &BipolarVec| crossbar_forward(&xb, x, Some(schedule.keys()));
        compare("crossbar", predict_all(&keyed, &set)?)?;
    }
    Ok(())
}
