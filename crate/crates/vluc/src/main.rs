//! Command-line driver for the benchmark pipeline.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
//! failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vluc::config::ExperimentSpec;
use vluc::dataset::Scaler;
use vluc::error::{Result, VlucError};
use vluc::eval::{
    case_study, efficiency, metrics, write_case_study_csv, write_efficiency_csv,
    write_metrics_csv, EfficiencyReport, MetricsReport,
};
use vluc::ingest::{calibrate_all, clean, format_timestamp};
use vluc::models::{
    copy_yesterday, harness::standard_checks, historical_average, load_checkpoint,
    save_checkpoint, CnnModel, ConvLstmModel, Model, MultitaskDf, VlucNet, VlucVariant,
};
use vluc::pipeline::{
    build_model, build_videos, day_span, load_records, model_config, predict_single_task,
    prepare, train_multitask, train_single_task, PreparedData, TrainedRun,
};
use vluc::rasterize::{read_vluc, write_grid_csv, write_vluc, VideoTensor};

#[derive(Parser)]
#[command(name = "vluc", version, about = "Citywide crowd/traffic video benchmark engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment spec (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the spec's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the spec's model kind (cnn|convlstm|multitask|vluc-net).
    #[arg(long)]
    model: Option<String>,
    /// Repeat training with consecutive seeds and aggregate.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Worker threads. The engine is deterministic regardless of this
    /// value; computation currently runs on one thread.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded synthetic trajectories into records.csv.
    Synth(Common),
    /// Clean and time-calibrate raw records into calibrated.csv.
    Calibrate(Common),
    /// Rasterize records into density.vluc and flow.vluc.
    Rasterize(Common),
    /// Train the configured model; writes a checkpoint and history.csv.
    Train(Common),
    /// Evaluate the trained model (and baselines) on the test split.
    Evaluate(Common),
    /// Finite-difference gradient verification of every layer and model.
    Gradcheck(Common),
    /// Print parameter counts for the neural models.
    Params(Common),
    /// Export a rasterized tensor as sparse grid CSV.
    Export {
        #[command(flatten)]
        common: Common,
        /// density | flow
        #[arg(long, default_value = "density")]
        tensor: String,
        #[arg(long, default_value_t = 0)]
        channel: usize,
    },
    /// Full pipeline: synth/ingest, rasterize, train, evaluate, report.
    Report(Common),
}

/// Tracks files created by a command so failures leave no partial output.
struct Outputs {
    created: Vec<PathBuf>,
    keep: bool,
}

impl Outputs {
    fn new() -> Outputs {
        Outputs { created: Vec::new(), keep: false }
    }

    fn create(&mut self, path: &Path) -> Result<BufWriter<File>> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = File::create(path)?;
        self.created.push(path.to_path_buf());
        Ok(BufWriter::new(file))
    }

    fn commit(&mut self) {
        self.keep = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.keep {
            return;
        }
        for path in &self.created {
            let _ = std::fs::remove_file(path);
        }
    }
}

struct Ctx {
    spec: ExperimentSpec,
    seed: u64,
    out_dir: PathBuf,
    config_dir: PathBuf,
    repeats: usize,
}

fn context(common: &Common) -> Result<Ctx> {
    let mut spec = ExperimentSpec::load(&common.config)?;
    if let Some(model) = &common.model {
        spec.model.kind = model.clone();
        spec.validate()?;
    }
    let seed = common.seed.unwrap_or(spec.seed);
    let out_dir = common.out.clone().unwrap_or_else(|| spec.out_dir.clone());
    let config_dir = common
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    if common.repeats == 0 {
        return Err(VlucError::Config("--repeats must be at least 1".into()));
    }
    if common.threads == 0 {
        return Err(VlucError::Config("--threads must be at least 1".into()));
    }
    Ok(Ctx { spec, seed, out_dir, config_dir, repeats: common.repeats })
}

fn cmd_synth(ctx: &Ctx) -> Result<()> {
    let records = vluc::pipeline::synth_records(&ctx.spec, ctx.seed)?;
    let mut outputs = Outputs::new();
    let mut w = outputs.create(&ctx.out_dir.join("records.csv"))?;
    writeln!(w, "object_id,timestamp,lat,lon")?;
    for r in &records {
        writeln!(w, "{},{},{:.7},{:.7}", r.object_id, format_timestamp(r.timestamp), r.lat, r.lon)?;
    }
    w.flush()?;
    outputs.commit();
    println!("wrote {} records to {}", records.len(), ctx.out_dir.join("records.csv").display());
    Ok(())
}

fn cmd_calibrate(ctx: &Ctx) -> Result<()> {
    let records = load_records(&ctx.spec, ctx.seed, &ctx.config_dir)?;
    let cleaned = clean(&records, ctx.spec.data.max_speed);
    let trajectories = calibrate_all(&cleaned, ctx.spec.data.delta_tau)?;
    let mut outputs = Outputs::new();
    let mut w = outputs.create(&ctx.out_dir.join("calibrated.csv"))?;
    writeln!(w, "object_id,day,slot,lat,lon")?;
    let mut n = 0usize;
    for t in &trajectories {
        for (slot, lat, lon) in &t.points {
            writeln!(w, "{},{},{},{:.7},{:.7}", t.object_id, t.day, slot, lat, lon)?;
            n += 1;
        }
    }
    w.flush()?;
    outputs.commit();
    println!("calibrated {} points across {} object-days", n, trajectories.len());
    Ok(())
}

fn write_tensor(outputs: &mut Outputs, path: &Path, video: &VideoTensor) -> Result<()> {
    let mut w = outputs.create(path)?;
    write_vluc(video, &mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_rasterize(ctx: &Ctx) -> Result<()> {
    let records = load_records(&ctx.spec, ctx.seed, &ctx.config_dir)?;
    let (start_day, n_days) = day_span(&records)?;
    let (density, flow) = build_videos(&ctx.spec, &records, start_day, n_days)?;
    let mut outputs = Outputs::new();
    write_tensor(&mut outputs, &ctx.out_dir.join("density.vluc"), &density)?;
    write_tensor(&mut outputs, &ctx.out_dir.join("flow.vluc"), &flow)?;
    outputs.commit();
    println!(
        "rasterized {} frames of {}x{} (density max {}, flow max {})",
        density.t,
        density.h,
        density.w,
        density.max_value(),
        flow.max_value()
    );
    Ok(())
}

fn read_tensor(path: &Path) -> Result<VideoTensor> {
    let file = File::open(path).map_err(|e| VlucError::data(format!("{}: {e}", path.display())))?;
    read_vluc(std::io::BufReader::new(file))
}

/// Tensors for a run: from disk when `rasterize` already produced them,
/// otherwise built in memory.
fn load_or_build_videos(ctx: &Ctx) -> Result<(VideoTensor, VideoTensor)> {
    let d = ctx.out_dir.join("density.vluc");
    let f = ctx.out_dir.join("flow.vluc");
    if d.exists() && f.exists() {
        return Ok((read_tensor(&d)?, read_tensor(&f)?));
    }
    let records = load_records(&ctx.spec, ctx.seed, &ctx.config_dir)?;
    let (start_day, n_days) = day_span(&records)?;
    build_videos(&ctx.spec, &records, start_day, n_days)
}

fn start_day_of(video: &VideoTensor) -> chrono::NaiveDate {
    chrono::DateTime::from_timestamp(video.start_timestamp, 0)
        .expect("valid tensor timestamp")
        .date_naive()
}

fn target_video<'a>(ctx: &Ctx, density: &'a VideoTensor, flow: &'a VideoTensor) -> &'a VideoTensor {
    if ctx.spec.model.target == "flow" {
        flow
    } else {
        density
    }
}

fn needs_context(kind: &str) -> bool {
    kind == "vluc-net"
}

fn checkpoint_paths(ctx: &Ctx, kind: &str) -> (PathBuf, PathBuf) {
    (
        ctx.out_dir.join(format!("{kind}.ckpt")),
        ctx.out_dir.join(format!("{kind}.index.csv")),
    )
}

fn train_once(
    ctx: &Ctx,
    density: &VideoTensor,
    flow: &VideoTensor,
    seed: u64,
) -> Result<(Box<dyn Model>, TrainedRun, PreparedData)> {
    let kind = ctx.spec.model.kind.as_str();
    let start_day = start_day_of(density);
    if kind == "multitask" {
        let ddata = prepare(&ctx.spec, density, start_day)?;
        let fdata = prepare(&ctx.spec, flow, start_day)?;
        let mut model = build_model(&ctx.spec, 1, seed)?;
        let run = train_multitask(model.as_mut(), &ddata, &fdata, &ctx.spec.train, seed)?;
        Ok((model, run, ddata))
    } else {
        let video = target_video(ctx, density, flow);
        let data = prepare(&ctx.spec, video, start_day)?;
        let mut model = build_model(&ctx.spec, video.c, seed)?;
        let run = train_single_task(
            model.as_mut(),
            &data,
            &ctx.spec.train,
            seed,
            needs_context(kind),
        )?;
        Ok((model, run, data))
    }
}

fn write_history(outputs: &mut Outputs, path: &Path, run: &TrainedRun) -> Result<()> {
    let mut w = outputs.create(path)?;
    writeln!(w, "epoch,train_mse,val_mse,seconds")?;
    for e in &run.history.epochs {
        writeln!(w, "{},{:.9},{:.9},{:.3}", e.epoch, e.train_mse, e.val_mse, e.seconds)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_train(ctx: &Ctx) -> Result<()> {
    let kind = ctx.spec.model.kind.clone();
    if kind == "ha" || kind == "cy" {
        return Err(VlucError::Config(format!("model '{kind}' has nothing to train")));
    }
    let (density, flow) = load_or_build_videos(ctx)?;
    let mut outputs = Outputs::new();
    let mut last_val = f64::NAN;
    for rep in 0..ctx.repeats {
        let seed = ctx.seed + rep as u64;
        let (mut model, run, _) = train_once(ctx, &density, &flow, seed)?;
        let suffix = if ctx.repeats == 1 { String::new() } else { format!(".r{rep}") };
        let (blob, index) = checkpoint_paths(ctx, &format!("{kind}{suffix}"));
        // register before writing so a failure cleans them up
        outputs.create(&blob)?;
        outputs.create(&index)?;
        save_checkpoint(model.as_mut(), &blob, &index)?;
        write_history(&mut outputs, &ctx.out_dir.join(format!("{kind}{suffix}.history.csv")), &run)?;
        println!(
            "trained {kind} (seed {seed}): best val MSE {:.6} at epoch {} of {}",
            run.history.best_val_mse,
            run.history.best_epoch,
            run.history.epochs.len()
        );
        last_val = run.history.best_val_mse;
    }
    outputs.commit();
    if !last_val.is_finite() {
        return Err(VlucError::Numerical("training produced no finite validation loss".into()));
    }
    Ok(())
}

fn baseline_metrics(
    ctx: &Ctx,
    video: &VideoTensor,
    data: &PreparedData,
) -> Result<Vec<(String, MetricsReport)>> {
    let (_, _, test) = data.splits()?;
    let spd = ctx.spec.mesh.steps_per_day();
    let first_test = test.first().map(|s| s.t_index).unwrap_or(0);
    let identity = Scaler::identity();
    let mut rows = Vec::new();
    for kind in ["ha", "cy"] {
        let mut pred = Vec::new();
        let mut target = Vec::new();
        for s in test {
            let frame = match kind {
                "ha" => historical_average(video, &data.calendar, 0..first_test, s.t_index)?,
                _ => copy_yesterday(video, spd, s.t_index)?,
            };
            pred.extend_from_slice(frame.data());
            target.extend_from_slice(video.frame(s.t_index));
        }
        rows.push((kind.to_string(), metrics(&pred, &target, &identity)?));
    }
    Ok(rows)
}

/// Case-study coordinates: the busiest cell of the test targets, weekday
/// morning and evening slots.
fn case_study_rows(
    name: &str,
    preds: &vluc::pipeline::Predictions,
    data: &PreparedData,
    spd: usize,
) -> Vec<(String, (usize, usize), usize, bool, f64, usize)> {
    let mut best_cell = (0usize, 0usize);
    let mut best_sum = f64::NEG_INFINITY;
    if let Some(first) = preds.target_frames.first() {
        let s = first.shape();
        let (h, w, c) = (s[0], s[1], s[2]);
        for row in 0..h {
            for col in 0..w {
                let sum: f64 = preds
                    .target_frames
                    .iter()
                    .map(|f| f.data()[(row * w + col) * c])
                    .sum();
                if sum > best_sum {
                    best_sum = sum;
                    best_cell = (row, col);
                }
            }
        }
    }
    let mut rows = Vec::new();
    for slot in [spd * 9 / 24, spd * 18 / 24] {
        for weekday in [true, false] {
            if let Ok((rmse, frames)) = case_study(
                &preds.pred_frames,
                &preds.target_frames,
                &preds.t_indices,
                &data.calendar,
                &data.scaler,
                best_cell,
                0,
                slot,
                weekday,
            ) {
                rows.push((name.to_string(), best_cell, slot, weekday, rmse, frames));
            }
        }
    }
    rows
}

fn cmd_evaluate(ctx: &Ctx) -> Result<()> {
    let (density, flow) = load_or_build_videos(ctx)?;
    let kind = ctx.spec.model.kind.clone();
    let start_day = start_day_of(&density);
    let video = target_video(ctx, &density, &flow);
    let data = prepare(&ctx.spec, video, start_day)?;
    let (_, _, test) = data.splits()?;

    let mut rows = baseline_metrics(ctx, video, &data)?;
    let mut case_rows = Vec::new();
    if kind != "ha" && kind != "cy" {
        if kind == "multitask" {
            return Err(VlucError::Config(
                "evaluate currently reports multitask runs via the report command".into(),
            ));
        }
        let mut model = build_model(&ctx.spec, video.c, ctx.seed)?;
        let (blob, index) = checkpoint_paths(ctx, &kind);
        load_checkpoint(model.as_mut(), &blob, &index)?;
        let preds = predict_single_task(
            model.as_mut(),
            test,
            needs_context(&kind),
            ctx.spec.train.batch_size,
        )?;
        rows.push((kind.clone(), metrics(&preds.pred_flat, &preds.target_flat, &data.scaler)?));
        case_rows.extend(case_study_rows(&kind, &preds, &data, ctx.spec.mesh.steps_per_day()));
    }

    let mut outputs = Outputs::new();
    let mut w = outputs.create(&ctx.out_dir.join("metrics.csv"))?;
    write_metrics_csv(&rows, &mut w)?;
    w.flush()?;
    if !case_rows.is_empty() {
        let mut w = outputs.create(&ctx.out_dir.join("case_studies.csv"))?;
        write_case_study_csv(&case_rows, &mut w)?;
        w.flush()?;
    }
    outputs.commit();
    for (name, m) in &rows {
        println!(
            "{name}: RMSE {:.4} MAE {:.4} MAPE {}",
            m.rmse,
            m.mae,
            m.mape.map(|v| format!("{:.4}", v)).unwrap_or_else(|| "undefined".into())
        );
    }
    Ok(())
}

fn cmd_gradcheck(ctx: &Ctx) -> Result<()> {
    let checks = standard_checks(ctx.seed)?;
    let mut worst = 0.0f64;
    for (name, report) in &checks {
        println!(
            "{name}: max rel error {:.3e} over {} partials ({})",
            report.max_rel_error,
            report.checked,
            if report.passes(1e-4) { "ok" } else { "FAIL" }
        );
        worst = worst.max(report.max_rel_error);
    }
    if worst >= 1e-4 {
        return Err(VlucError::Numerical(format!(
            "gradient check failed: worst relative error {worst:.3e} >= 1e-4"
        )));
    }
    Ok(())
}

fn cmd_params(ctx: &Ctx) -> Result<()> {
    use vluc::models::count_params;
    let mk = |channels: usize| model_config(&ctx.spec, channels);
    let mut rows: Vec<(String, usize)> = Vec::new();
    let started = std::time::Instant::now();
    rows.push(("cnn[density]".into(), count_params(&mut CnnModel::new(&mk(1), 0)?).2));
    rows.push(("cnn[flow]".into(), count_params(&mut CnnModel::new(&mk(2), 0)?).2));
    rows.push(("convlstm[density]".into(), count_params(&mut ConvLstmModel::new(&mk(1), 0)?).2));
    rows.push(("convlstm[flow]".into(), count_params(&mut ConvLstmModel::new(&mk(2), 0)?).2));
    rows.push(("multitask-df".into(), count_params(&mut MultitaskDf::new(&mk(1), 0)?).2));
    rows.push((
        "vluc-net[plain,density]".into(),
        count_params(&mut VlucNet::new(&mk(1), VlucVariant::Plain, 0)?).2,
    ));
    rows.push((
        "vluc-net[pyramid,density]".into(),
        count_params(&mut VlucNet::new(&mk(1), VlucVariant::Pyramid, 0)?).2,
    ));
    for (name, total) in &rows {
        println!("{name}: {total} parameters");
    }
    println!("counted in {:.3}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_export(ctx: &Ctx, tensor: &str, channel: usize) -> Result<()> {
    let path = match tensor {
        "density" => ctx.out_dir.join("density.vluc"),
        "flow" => ctx.out_dir.join("flow.vluc"),
        other => return Err(VlucError::Config(format!("unknown tensor '{other}'"))),
    };
    let video = read_tensor(&path)?;
    let out_path = ctx.out_dir.join(format!("{tensor}_ch{channel}.csv"));
    let mut outputs = Outputs::new();
    let mut w = outputs.create(&out_path)?;
    write_grid_csv(&video, channel, &mut w)?;
    w.flush()?;
    outputs.commit();
    println!("exported {} channel {} to {}", tensor, channel, out_path.display());
    Ok(())
}

fn cmd_report(ctx: &Ctx) -> Result<()> {
    let records = load_records(&ctx.spec, ctx.seed, &ctx.config_dir)?;
    let (start_day, n_days) = day_span(&records)?;
    let (density, flow) = build_videos(&ctx.spec, &records, start_day, n_days)?;
    let kind = ctx.spec.model.kind.clone();
    if kind == "multitask" {
        return Err(VlucError::Config(
            "report supports single-task kinds; train multitask via the train command".into(),
        ));
    }
    let video = target_video(ctx, &density, &flow);
    let data = prepare(&ctx.spec, video, start_day)?;
    let (_, _, test) = data.splits()?;

    let mut metric_rows = baseline_metrics(ctx, video, &data)?;
    let mut eff_rows: Vec<(String, EfficiencyReport)> = Vec::new();
    let mut case_rows = Vec::new();
    let mut repeat_rmse = Vec::new();
    if kind != "ha" && kind != "cy" {
        for rep in 0..ctx.repeats {
            let seed = ctx.seed + rep as u64;
            let (mut model, run, _) = train_once(ctx, &density, &flow, seed)?;
            let preds = predict_single_task(
                model.as_mut(),
                test,
                needs_context(&kind),
                ctx.spec.train.batch_size,
            )?;
            let m = metrics(&preds.pred_flat, &preds.target_flat, &data.scaler)?;
            repeat_rmse.push(m.rmse);
            let label = if ctx.repeats == 1 { kind.clone() } else { format!("{kind}.r{rep}") };
            eff_rows.push((label.clone(), efficiency(run.param_counts, &run.history)));
            if rep == 0 {
                case_rows.extend(case_study_rows(&kind, &preds, &data, ctx.spec.mesh.steps_per_day()));
            }
            metric_rows.push((label, m));
        }
    }

    let mut outputs = Outputs::new();
    write_tensor(&mut outputs, &ctx.out_dir.join("density.vluc"), &density)?;
    write_tensor(&mut outputs, &ctx.out_dir.join("flow.vluc"), &flow)?;
    let mut w = outputs.create(&ctx.out_dir.join("metrics.csv"))?;
    write_metrics_csv(&metric_rows, &mut w)?;
    w.flush()?;
    if !eff_rows.is_empty() {
        let mut w = outputs.create(&ctx.out_dir.join("efficiency.csv"))?;
        write_efficiency_csv(&eff_rows, &mut w)?;
        w.flush()?;
    }
    if !case_rows.is_empty() {
        let mut w = outputs.create(&ctx.out_dir.join("case_studies.csv"))?;
        write_case_study_csv(&case_rows, &mut w)?;
        w.flush()?;
    }
    if ctx.repeats > 1 {
        let mean = repeat_rmse.iter().sum::<f64>() / repeat_rmse.len() as f64;
        let var = repeat_rmse.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
            / repeat_rmse.len() as f64;
        let mut w = outputs.create(&ctx.out_dir.join("report.csv"))?;
        writeln!(w, "model,repeats,mean_rmse,std_rmse")?;
        writeln!(w, "{},{},{:.9},{:.9}", kind, ctx.repeats, mean, var.sqrt())?;
        w.flush()?;
    }
    outputs.commit();
    for (name, m) in &metric_rows {
        println!("{name}: RMSE {:.4} MAE {:.4}", m.rmse, m.mae);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(c) => cmd_synth(&context(c)?),
        Command::Calibrate(c) => cmd_calibrate(&context(c)?),
        Command::Rasterize(c) => cmd_rasterize(&context(c)?),
        Command::Train(c) => cmd_train(&context(c)?),
        Command::Evaluate(c) => cmd_evaluate(&context(c)?),
        Command::Gradcheck(c) => cmd_gradcheck(&context(c)?),
        Command::Params(c) => cmd_params(&context(c)?),
        Command::Export { common, tensor, channel } => cmd_export(&context(common)?, tensor, *channel),
        Command::Report(c) => cmd_report(&context(c)?),
    }
}

fn exit_code(err: &VlucError) -> u8 {
    match err {
        VlucError::InvalidInput(_) | VlucError::Config(_) => 1,
        VlucError::Io(_) | VlucError::Data(_) | VlucError::Shape(_) => 2,
        VlucError::Numerical(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
