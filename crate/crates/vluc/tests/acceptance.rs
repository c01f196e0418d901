//! Acceptance criteria for the benchmark engine. Each test prints a
//! single PASS line on success; a panic marks the criterion failed.

use std::collections::BTreeMap;
use std::time::Instant;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vluc::config::ExperimentSpec;
use vluc::dataset::{make_samples, split, Calendar, Sample, Scaler, WindowSpec};
use vluc::error::Result;
use vluc::eval::metrics;
use vluc::ingest::{calibrate, parse_timestamp, RawRecord};
use vluc::models::{
    copy_yesterday, count_params, harness::standard_checks, historical_average, save_checkpoint,
    train, CnnModel, ConvLstmModel, Model, ModelConfig, MultitaskDf, SingleTaskData, TrainConfig,
    VlucNet, VlucVariant,
};
use vluc::pipeline::{build_videos, prepare, synth_records, train_single_task};
use vluc::rasterize::{
    build_video, cell_tracks, density_frame, flow_frame, write_vluc, MeshSpec, VideoKind,
};

fn mesh_16x16() -> MeshSpec {
    MeshSpec {
        lon_min: 139.5,
        lon_max: 139.9,
        lat_min: 35.5,
        lat_max: 35.9,
        d_lon: 0.025,
        d_lat: 0.025,
        frame_interval: 3600,
    }
}

fn base_model_cfg(channels: usize) -> ModelConfig {
    ModelConfig {
        channels,
        l_c: 6,
        filters: 32,
        height: 16,
        width: 16,
        lambda: 0.3,
        meta_dim: 48 + 7 + 1,
    }
}

#[test]
fn criterion_01_parameter_counts() {
    let started = Instant::now();
    let expected: [(&str, usize); 5] = [
        ("cnn density", 20_929),
        ("cnn flow", 22_946),
        ("convlstm density", 187_432),
        ("convlstm flow", 189_848),
        ("multitask-df", 266_176),
    ];
    let counts = [
        count_params(&mut CnnModel::new(&base_model_cfg(1), 0).unwrap()).2,
        count_params(&mut CnnModel::new(&base_model_cfg(2), 0).unwrap()).2,
        count_params(&mut ConvLstmModel::new(&base_model_cfg(1), 0).unwrap()).2,
        count_params(&mut ConvLstmModel::new(&base_model_cfg(2), 0).unwrap()).2,
        count_params(&mut MultitaskDf::new(&base_model_cfg(1), 0).unwrap()).2,
    ];
    for ((name, want), got) in expected.iter().zip(counts) {
        assert_eq!(got, *want, "{name}: expected {want} parameters, counted {got}");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "counting took {elapsed:?}, budget 1s");
    println!("criterion 01 (exact parameter counts, <1s): PASS [{elapsed:?}]");
}

#[test]
fn criterion_02_frames_match_brute_force() {
    let started = Instant::now();
    let (h, w) = (5, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..1000 {
        let n_objects = rng.gen_range(1..=15);
        let place = |rng: &mut ChaCha8Rng| -> Vec<Option<(usize, usize)>> {
            (0..n_objects)
                .map(|_| {
                    if rng.gen_bool(0.15) {
                        None
                    } else {
                        Some((rng.gen_range(0..h), rng.gen_range(0..w)))
                    }
                })
                .collect()
        };
        let prev = place(&mut rng);
        let curr = place(&mut rng);

        let density = density_frame(&curr, h, w);
        let flow = flow_frame(&prev, &curr, h, w);

        // independent brute-force oracle
        for r in 0..h {
            for c in 0..w {
                let cell = Some((r, c));
                let d = curr.iter().filter(|p| **p == cell).count() as f64;
                assert_eq!(density[r * w + c], d, "density mismatch at ({r},{c})");
                let inflow = curr
                    .iter()
                    .zip(&prev)
                    .filter(|(q, p)| **q == cell && **p != cell)
                    .count() as f64;
                let outflow = prev
                    .iter()
                    .zip(&curr)
                    .filter(|(p, q)| **p == cell && **q != cell)
                    .count() as f64;
                assert_eq!(flow[(r * w + c) * 2], inflow, "inflow mismatch at ({r},{c})");
                assert_eq!(flow[(r * w + c) * 2 + 1], outflow, "outflow mismatch at ({r},{c})");
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "frames took {elapsed:?}, budget 10s");
    println!("criterion 02 (1000 randomized frames vs brute force, <10s): PASS [{elapsed:?}]");
}

#[test]
fn criterion_03_closed_world_conservation() {
    let started = Instant::now();
    let mesh = mesh_16x16();
    let cfg = vluc::synthgen::SynthConfig {
        n_objects: 60,
        n_days: 2,
        start_date: NaiveDate::from_ymd_opt(2017, 4, 3).unwrap(),
        mesh: mesh.clone(),
        records_per_day: 30,
    };
    let records = vluc::synthgen::make_closed_world(&cfg, 303).unwrap();
    let cleaned = vluc::ingest::clean(&records, 1e9); // keep everything
    let trajectories = vluc::ingest::calibrate_all(&cleaned, 600).unwrap();
    let tracks = cell_tracks(&trajectories, &mesh, cfg.start_date, cfg.n_days).unwrap();
    let density = build_video(&tracks, &mesh, VideoKind::Density, cfg.start_date, cfg.n_days).unwrap();
    let flow = build_video(&tracks, &mesh, VideoKind::Flow, cfg.start_date, cfg.n_days).unwrap();
    assert_eq!(density.t, 48);
    for t in 1..density.t {
        for r in 0..density.h {
            for c in 0..density.w {
                let lhs = density.get(t, r, c, 0);
                let rhs = density.get(t - 1, r, c, 0) + flow.get(t, r, c, 0) - flow.get(t, r, c, 1);
                assert_eq!(
                    lhs, rhs,
                    "conservation broken at t={t} cell=({r},{c}): {lhs} != {rhs}"
                );
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "conservation took {elapsed:?}, budget 30s");
    println!("criterion 03 (closed-world conservation d_t = d_t-1 + in - out, <30s): PASS [{elapsed:?}]");
}

#[test]
fn criterion_04_calibration_boundaries_and_interpolation() {
    let rec = |ts: &str, lat: f64, lon: f64| RawRecord {
        object_id: "u1".to_string(),
        timestamp: parse_timestamp(&format!("2017-04-01 {ts}")).unwrap(),
        lat,
        lon,
    };
    // observations spanning 09:14:10 .. 09:51:40, slot width 600 s
    let records = vec![
        rec("09:14:10", 35.10, 139.10),
        rec("09:27:53", 35.20, 139.20),
        rec("09:38:20", 35.30, 139.30),
        rec("09:45:00", 35.40, 139.40),
        rec("09:51:40", 35.50, 139.50),
    ];
    let cal = calibrate(&records, 600).unwrap();
    let slots: Vec<usize> = cal.points.iter().map(|p| p.0).collect();
    // calibrated span runs 09:10:00 .. 10:00:00 inclusive
    assert_eq!(slots, vec![55, 56, 57, 58, 59, 60], "calibrated slot span");
    let tol = 1e-9;
    // boundary slots clamp to the nearest observation
    assert!((cal.points[0].1 - 35.10).abs() < tol && (cal.points[0].2 - 139.10).abs() < tol);
    assert!((cal.points[5].1 - 35.50).abs() < tol && (cal.points[5].2 - 139.50).abs() < tol);
    // 09:30:00 is linearly interpolated between 09:27:53 and 09:38:20
    let t0 = 9.0 * 3600.0 + 27.0 * 60.0 + 53.0;
    let t1 = 9.0 * 3600.0 + 38.0 * 60.0 + 20.0;
    let u = (9.0 * 3600.0 + 30.0 * 60.0 - t0) / (t1 - t0);
    assert!((cal.points[2].1 - (35.20 + u * 0.1)).abs() < tol, "lat at 09:30:00");
    assert!((cal.points[2].2 - (139.20 + u * 0.1)).abs() < tol, "lon at 09:30:00");
    // interior slot 09:20:00 interpolates the first two observations
    let u2 = (9.0 * 3600.0 + 20.0 * 60.0 - (9.0 * 3600.0 + 14.0 * 60.0 + 10.0))
        / (t0 - (9.0 * 3600.0 + 14.0 * 60.0 + 10.0));
    assert!((cal.points[1].1 - (35.10 + u2 * 0.1)).abs() < tol, "lat at 09:20:00");
    println!("criterion 04 (time calibration: span, clamping, interpolation at 1e-9 deg): PASS");
}

#[test]
fn criterion_05_gradient_checks() {
    let started = Instant::now();
    let checks = standard_checks(500).unwrap();
    let names: Vec<&str> = checks.iter().map(|(n, _)| n.as_str()).collect();
    for required in [
        "conv2d", "batchnorm", "convlstm", "attention", "dense", "cnn[density]",
        "convlstm-net[density]", "multitask-df", "vluc-net[plain]", "vluc-net[pyramid]",
    ] {
        assert!(names.contains(&required), "missing gradient check for {required}");
    }
    for (name, report) in &checks {
        assert!(
            report.passes(1e-4),
            "{name}: max relative gradient error {:.3e} at {} (tolerance 1e-4)",
            report.max_rel_error,
            report.worst_param
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "gradient checks took {elapsed:?}, budget 2min");
    println!(
        "criterion 05 (finite-difference gradients, every layer and model, <1e-4, <2min): PASS [{elapsed:?}]"
    );
}

fn synthetic_video(t: usize, h: usize, w: usize) -> vluc::rasterize::VideoTensor {
    vluc::rasterize::VideoTensor {
        t,
        h,
        w,
        c: 1,
        data: (0..t * h * w).map(|i| (i % 97) as f64 / 97.0).collect(),
        start_timestamp: parse_timestamp("2017-04-03 00:00:00").unwrap(),
        frame_interval: 1800,
        channel_labels: vec!["density".to_string()],
    }
}

#[test]
fn criterion_06_windowing_and_splits() {
    let video = synthetic_video(4800, 2, 2);
    let spec = WindowSpec { l_c: 6, t_c: 1, t_p: 48, t_t: 336 };
    let calendar = Calendar {
        start_date: NaiveDate::from_ymd_opt(2017, 4, 3).unwrap(),
        steps_per_day: 48,
        holidays: Default::default(),
    };
    let samples = make_samples(&video, &spec, &Scaler::identity(), &calendar).unwrap();
    assert_eq!(samples.len(), 4458, "sample count for T=4800");
    assert_eq!(samples[0].t_index, 342, "first reachable target index");
    assert_eq!(samples.last().unwrap().t_index, 4799);
    let (train, val, test) = split(&samples).unwrap();
    assert_eq!(train.len(), 2853, "64% train boundary");
    assert_eq!(val.len(), 713, "16% validation");
    assert_eq!(test.len(), 892, "20% test");
    // chronological: every train target precedes every val target, etc.
    assert!(train.last().unwrap().t_index < val[0].t_index);
    assert!(val.last().unwrap().t_index < test[0].t_index);
    println!("criterion 06 (windowing T=4800 -> 4458 samples, first target 342, 64/16/20): PASS");
}

fn overfit_samples(rng: &mut ChaCha8Rng, l_c: usize, h: usize, w: usize, meta_dim: usize) -> Vec<Sample> {
    (0..4)
        .map(|i| {
            let rnd = |rng: &mut ChaCha8Rng, shape: &[usize]| {
                let n: usize = shape.iter().product();
                vluc::neural::Tensor::from_vec(
                    shape,
                    (0..n).map(|_| rng.gen_range(0.0..0.5)).collect(),
                )
                .unwrap()
            };
            let mut target = rnd(rng, &[h, w, 1]);
            // scaled density frames are mostly near zero; keep targets in
            // [0, 0.05] to match that regime
            target.scale(0.1);
            Sample {
                closeness: rnd(rng, &[l_c, h, w, 1]),
                period: rnd(rng, &[l_c, h, w, 1]),
                trend: rnd(rng, &[l_c, h, w, 1]),
                meta: rnd(rng, &[3 * l_c, meta_dim]),
                target,
                t_index: i,
            }
        })
        .collect()
}

fn overfit(model: &mut dyn Model, samples: &[Sample], with_context: bool) -> Result<f64> {
    let provider = if with_context {
        SingleTaskData::full(samples)
    } else {
        SingleTaskData::closeness_only(samples)
    };
    // 4 samples with batch 4: one Adam step per epoch, 2000 steps total
    let cfg = TrainConfig {
        batch_size: 4,
        learning_rate: 1e-4,
        max_epochs: 2000,
        patience: 2000,
    };
    let history = train(model, &provider, &provider, &cfg, 77)?;
    Ok(history.epochs.last().unwrap().train_mse)
}

#[test]
fn criterion_07_overfit_four_samples() {
    let started = Instant::now();
    let (l_c, h, w, meta_dim) = (3, 8, 8, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let samples = overfit_samples(&mut rng, l_c, h, w, meta_dim);
    let cfg = ModelConfig {
        channels: 1,
        l_c,
        filters: 16,
        height: h,
        width: w,
        lambda: 0.3,
        meta_dim,
    };
    let mut cnn = CnnModel::new(&cfg, 7).unwrap();
    let cnn_mse = overfit(&mut cnn, &samples, false).unwrap();
    assert!(cnn_mse < 1e-3, "cnn train MSE after 2000 steps: {cnn_mse:.6}");

    let vluc_cfg = ModelConfig { filters: 8, ..cfg };
    let mut net = VlucNet::new(&vluc_cfg, VlucVariant::Plain, 7).unwrap();
    let net_mse = overfit(&mut net, &samples, true).unwrap();
    assert!(net_mse < 1e-3, "vluc-net train MSE after 2000 steps: {net_mse:.6}");

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 180.0, "overfit took {elapsed:?}, budget 3min");
    println!(
        "criterion 07 (overfit 4 samples, 2000 Adam steps, lr 1e-4, MSE<1e-3: cnn {cnn_mse:.2e}, vluc-net {net_mse:.2e}, <3min): PASS [{elapsed:?}]"
    );
}

fn benchmark_spec() -> ExperimentSpec {
    let text = r#"
seed = 8
out_dir = "unused"

[mesh]
lon_min = 139.5
lon_max = 139.9
lat_min = 35.5
lat_max = 35.9
d_lon = 0.025
d_lat = 0.025
frame_interval = 3600

[data]
delta_tau = 600
k_anonymity = 10

[synth]
n_objects = 3000
n_days = 28
start_date = "2017-04-03"

[windows]
l_c = 4
t_c = 1
t_p = 24
t_t = 168

[model]
kind = "convlstm"
filters = 8

[train]
batch_size = 8
learning_rate = 2e-3
max_epochs = 24
patience = 24
"#;
    let spec: ExperimentSpec = toml::from_str(text).unwrap();
    spec.validate().unwrap();
    spec
}

#[test]
fn criterion_08_models_beat_baselines() {
    let started = Instant::now();
    let mut spec = benchmark_spec();
    let records = synth_records(&spec, spec.seed).unwrap();
    let start_day = NaiveDate::from_ymd_opt(2017, 4, 3).unwrap();
    let (density, _flow) = build_videos(&spec, &records, start_day, 28).unwrap();
    assert_eq!(density.h, 16);
    assert_eq!(density.w, 16);
    let data = prepare(&spec, &density, start_day).unwrap();
    let (_, _, test) = data.splits().unwrap();

    // baselines, original scale
    let spd = spec.mesh.steps_per_day();
    let first_test = test[0].t_index;
    let identity = Scaler::identity();
    let mut rmse_of = BTreeMap::new();
    for kind in ["ha", "cy"] {
        let mut pred = Vec::new();
        let mut target = Vec::new();
        for s in test {
            let frame = match kind {
                "ha" => historical_average(&density, &data.calendar, 0..first_test, s.t_index).unwrap(),
                _ => copy_yesterday(&density, spd, s.t_index).unwrap(),
            };
            pred.extend_from_slice(frame.data());
            target.extend_from_slice(density.frame(s.t_index));
        }
        rmse_of.insert(kind.to_string(), metrics(&pred, &target, &identity).unwrap().rmse);
    }

    for kind in ["convlstm", "vluc-net"] {
        spec.model.kind = kind.to_string();
        let mut model = vluc::pipeline::build_model(&spec, 1, spec.seed).unwrap();
        train_single_task(model.as_mut(), &data, &spec.train, spec.seed, kind == "vluc-net").unwrap();
        let preds = vluc::pipeline::predict_single_task(
            model.as_mut(),
            test,
            kind == "vluc-net",
            spec.train.batch_size,
        )
        .unwrap();
        let rmse = metrics(&preds.pred_flat, &preds.target_flat, &data.scaler).unwrap().rmse;
        rmse_of.insert(kind.to_string(), rmse);
    }

    let (ha, cy) = (rmse_of["ha"], rmse_of["cy"]);
    for kind in ["convlstm", "vluc-net"] {
        let rmse = rmse_of[kind];
        assert!(
            rmse < ha && rmse < cy,
            "{kind} RMSE {rmse:.4} must beat HA {ha:.4} and CY {cy:.4}"
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 900.0, "benchmark took {elapsed:?}, budget 15min");
    println!(
        "criterion 08 (synthetic benchmark: convlstm {:.4} and vluc-net {:.4} beat HA {ha:.4} / CY {cy:.4}, <15min): PASS [{elapsed:?}]",
        rmse_of["convlstm"], rmse_of["vluc-net"]
    );
}

#[test]
fn criterion_09_metric_arithmetic() {
    let tol = 1e-9;
    // identity scale, hand-computed values
    let m = metrics(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 5.0, 0.0], &Scaler::identity()).unwrap();
    // errors 0, 1, -2, 4
    assert!((m.mse - 21.0 / 4.0).abs() < tol);
    assert!((m.rmse - (21.0f64 / 4.0).sqrt()).abs() < tol);
    assert!((m.mae - 7.0 / 4.0).abs() < tol);
    // MAPE over nonzero targets only: (0/1 + 1/1 + 2/5) / 3
    assert!((m.mape.unwrap() - (1.0 + 0.4) / 3.0).abs() < tol);
    assert_eq!((m.n, m.mape_support), (4, 3));

    // min-max scale [2, 12]: scaled values are inverse-mapped before metrics
    let scaler = Scaler { min_value: 2.0, max_value: 12.0 };
    let m2 = metrics(&[0.5], &[0.3], &scaler).unwrap();
    assert!((m2.mae - 2.0).abs() < tol, "inverse scaling: 0.2 of span 10");
    assert!((m2.mse - 4.0).abs() < tol);
    assert!((m2.mape.unwrap() - 2.0 / 5.0).abs() < tol);

    // all-zero target: MAPE undefined, not NaN or zero
    let m3 = metrics(&[0.5, 0.25], &[0.0, 0.0], &Scaler::identity()).unwrap();
    assert!(m3.mape.is_none());
    assert_eq!(m3.mape_support, 0);
    println!("criterion 09 (metric arithmetic and MAPE zero-masking at 1e-9): PASS");
}

/// One full pipeline run serialized to bytes: tensors, trained checkpoint,
/// and the metrics CSV (no timing columns).
fn determinism_run() -> (Vec<u8>, Vec<u8>, Vec<u8>, Vec<u8>) {
    let text = r#"
seed = 10

[mesh]
lon_min = 139.5
lon_max = 139.7
lat_min = 35.5
lat_max = 35.7
d_lon = 0.025
d_lat = 0.025
frame_interval = 3600

[data]
delta_tau = 600
k_anonymity = 2

[synth]
n_objects = 40
n_days = 16
start_date = "2017-04-03"

[windows]
l_c = 4
t_c = 1
t_p = 24
t_t = 48

[model]
kind = "cnn"
filters = 8

[train]
batch_size = 4
learning_rate = 1e-3
max_epochs = 3
patience = 3
"#;
    let spec: ExperimentSpec = toml::from_str(text).unwrap();
    spec.validate().unwrap();
    let records = synth_records(&spec, spec.seed).unwrap();
    let start_day = NaiveDate::from_ymd_opt(2017, 4, 3).unwrap();
    let (density, flow) = build_videos(&spec, &records, start_day, 16).unwrap();
    let mut density_bytes = Vec::new();
    write_vluc(&density, &mut density_bytes).unwrap();
    let mut flow_bytes = Vec::new();
    write_vluc(&flow, &mut flow_bytes).unwrap();

    let data = prepare(&spec, &density, start_day).unwrap();
    let mut model = vluc::pipeline::build_model(&spec, 1, spec.seed).unwrap();
    train_single_task(model.as_mut(), &data, &spec.train, spec.seed, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let blob = dir.path().join("model.ckpt");
    let index = dir.path().join("model.index.csv");
    save_checkpoint(model.as_mut(), &blob, &index).unwrap();
    let ckpt_bytes = std::fs::read(&blob).unwrap();

    let (_, _, test) = data.splits().unwrap();
    let preds =
        vluc::pipeline::predict_single_task(model.as_mut(), test, false, 4).unwrap();
    let m = metrics(&preds.pred_flat, &preds.target_flat, &data.scaler).unwrap();
    let mut metrics_bytes = Vec::new();
    vluc::eval::write_metrics_csv(&[("cnn".to_string(), m)], &mut metrics_bytes).unwrap();
    (density_bytes, flow_bytes, ckpt_bytes, metrics_bytes)
}

#[test]
fn criterion_10_byte_identical_determinism() {
    let a = determinism_run();
    let b = determinism_run();
    assert_eq!(a.0, b.0, "density tensor bytes differ between runs");
    assert_eq!(a.1, b.1, "flow tensor bytes differ between runs");
    assert_eq!(a.2, b.2, "checkpoint bytes differ between runs");
    assert_eq!(a.3, b.3, "metrics CSV bytes differ between runs");
    println!("criterion 10 (byte-identical reruns: tensors, checkpoint, metrics): PASS");
}
