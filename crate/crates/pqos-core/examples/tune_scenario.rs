//! Scratch harness: runs the default synthetic scenario through the full
//! dataset pipeline and prints per-dataset GBT/net errors and improvements,
//! for checking that the generator defaults leave a healthy margin on the
//! lead-features-help claim.

use pqos_core::align::{spatial_align, temporal_align, SpatialAlignSpec};
use pqos_core::eval::{mae, smape, rmse, default_smape_eps};
use pqos_core::featureset::{
    build_egf, build_eglt, build_egls, diff_transform, minmax_scale, ratio_transform,
    temporal_split, windowize, DatasetKind, ScaleFit, SplitDataset,
};
use pqos_core::models::{
    train_conv, train_gbt, train_recurrent, ConvLayerSpec, ConvNetConfig, GbtConfig, Optimizer,
    RecurrentConfig,
};
use pqos_core::synthgen::{generate_traces, SynthConfig};
use std::time::Instant;

fn sweep(n_runs: usize) {
    // (device_noise, competition_gain, share_gain, tau)
    // (field_std, cell_std, device_noise, competition, share)
    let variants: [(f64, f64, f64, f64, f64); 4] = [
        (6.0, 2.0, 2.5, 1.0e5, 3.0e6),
        (6.0, 2.0, 2.5, 0.8e5, 3.0e6),
        (6.0, 2.0, 2.5, 1.2e5, 2.5e6),
        (6.0, 2.0, 2.5, 0.6e5, 3.5e6),
    ];
    let gbt_cfg = GbtConfig {
        n_trees: 150,
        max_depth: 5,
        learning_rate: 0.1,
        min_samples_leaf: 5,
        subsample_fraction: 0.8,
        seed: 0,
    };
    for (i, (field, cell, dev, comp, share)) in variants.iter().enumerate() {
        let mut cfg = SynthConfig::default();
        cfg.field.std_db = *field;
        cfg.link.cell_noise_std_db = *cell;
        cfg.link.cell_corr_time_s = 10.0;
        cfg.link.device_noise_std_db = *dev;
        cfg.link.competition_gain = *comp;
        cfg.link.share_gain = *share;
        cfg.link.datarate_base = 2.6e7;
        let datasets = build_all(&cfg);
        let mut egf_median = 0.0;
        let mut line =
            format!("V{i} f={field} c={cell} m={dev} comp={comp:.1e} share={share:.1e}:");
        for (kind, split) in &datasets {
            if matches!(kind, DatasetKind::EglsRatio) {
                continue;
            }
            let mut maes = Vec::new();
            for run in 0..n_runs {
                let mut c = gbt_cfg.clone();
                c.seed = 1000 + run as u64;
                let model = train_gbt(&split.train, &c).unwrap();
                let preds = model.predict_dataset(&split.test).unwrap();
                maes.push(mae(&split.test.y, &preds).unwrap());
            }
            maes.sort_by(f64::total_cmp);
            let median = maes[maes.len() / 2];
            if *kind == DatasetKind::Egf {
                egf_median = median;
            }
            line.push_str(&format!(
                "  {kind}={median:.5} ({:+.1}%)",
                100.0 * (egf_median - median) / egf_median
            ));
        }
        eprintln!("{line}");
    }
}

fn build_all(cfg: &SynthConfig) -> Vec<(DatasetKind, SplitDataset)> {
    let (collection, truth) = generate_traces(cfg).unwrap();
    let split = collection.split_ego_lead(cfg.measurement_id, &truth.role_map).unwrap();
    let temporal = temporal_align(&split.ego, &split.lead, 0.5);
    let spatial = spatial_align(&split.ego, &split.lead, &SpatialAlignSpec::default()).unwrap();
    eprintln!(
        "ego={} lead={} temporal_pairs={} spatial: {:?}",
        split.ego.len(),
        split.lead.len(),
        temporal.pairs.len(),
        spatial.pair_counts()
    );
    let egf = build_egf(&split.ego).unwrap();
    let eglt = build_eglt(&temporal.pairs).unwrap();
    let eglt_diff = diff_transform(&eglt).unwrap();
    let egls = build_egls(&spatial).unwrap();
    let egls_ratio = ratio_transform(&egls).unwrap();
    [egf, eglt, eglt_diff, egls, egls_ratio]
        .into_iter()
        .map(|d| {
            let kind = d.name;
            let scaled = minmax_scale(&d, ScaleFit::Full, 0.8).unwrap();
            (kind, temporal_split(&scaled, 0.8).unwrap())
        })
        .collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let run_nets = args.iter().any(|a| a == "--nets");
    let n_runs: usize = args
        .iter()
        .position(|a| a == "--runs")
        .and_then(|i| args.get(i + 1))
        .and_then(|v| v.parse().ok())
        .unwrap_or(5);

    if args.iter().any(|a| a == "--sweep") {
        sweep(n_runs);
        return;
    }

    let cfg = SynthConfig::default();
    let t0 = Instant::now();
    let datasets = build_all(&cfg);
    eprintln!("datasets built in {:.1?}", t0.elapsed());
    for (kind, split) in &datasets {
        eprintln!(
            "  {kind}: {} train rows, {} test rows, {} cols",
            split.train.n_rows(),
            split.test.n_rows(),
            split.train.n_cols()
        );
    }

    let gbt_cfg = GbtConfig {
        n_trees: 120,
        max_depth: 5,
        learning_rate: 0.1,
        min_samples_leaf: 5,
        subsample_fraction: 0.85,
        seed: 0,
    };
    let eps = default_smape_eps();
    let mut egf_median = 0.0;
    for (kind, split) in &datasets {
        let t = Instant::now();
        let mut maes = Vec::new();
        let mut smapes = Vec::new();
        for run in 0..n_runs {
            let mut c = gbt_cfg.clone();
            c.seed = 1000 + run as u64;
            let model = train_gbt(&split.train, &c).unwrap();
            let preds = model.predict_dataset(&split.test).unwrap();
            maes.push(mae(&split.test.y, &preds).unwrap());
            smapes.push(smape(&split.test.y, &preds, eps).unwrap());
        }
        maes.sort_by(f64::total_cmp);
        let median = maes[maes.len() / 2];
        if *kind == DatasetKind::Egf {
            egf_median = median;
        }
        let impr = 100.0 * (egf_median - median) / egf_median;
        eprintln!(
            "GBT {kind:<10} median MAE {median:.5} (impr vs EGF {impr:+.1}%)  smape {:.4}  [{:.1?}/run]",
            smapes[smapes.len() / 2],
            t.elapsed() / n_runs as u32
        );
    }

    if run_nets {
        let conv_cfg = ConvNetConfig {
            lookback: 60,
            conv_layers: vec![ConvLayerSpec { channels: 8, kernel: 5 }],
            head_width: 8,
            epochs: 15,
            learning_rate: 0.003,
            batch_size: 64,
            optimizer: Optimizer::Adam,
            seed: 0,
        };
        let rec_cfg = RecurrentConfig {
            lookback: 60,
            hidden_size: 8,
            epochs: 12,
            learning_rate: 0.005,
            batch_size: 64,
            optimizer: Optimizer::Adam,
            seed: 0,
        };
        let net_runs = 3usize;
        for (kind, split) in &datasets {
            if !matches!(kind, DatasetKind::Egf | DatasetKind::Eglt | DatasetKind::Egls) {
                continue;
            }
            let train_w = windowize(&split.train, 60).unwrap();
            let test_w = windowize(&split.test, 60).unwrap();
            for family in ["conv", "recurrent"] {
                let t = Instant::now();
                let mut maes = Vec::new();
                for run in 0..net_runs {
                    let preds = match family {
                        "conv" => {
                            let mut c = conv_cfg.clone();
                            c.seed = 2000 + run as u64;
                            train_conv(&train_w, &c).unwrap().predict(&test_w).unwrap()
                        }
                        _ => {
                            let mut c = rec_cfg.clone();
                            c.seed = 3000 + run as u64;
                            train_recurrent(&train_w, &c).unwrap().predict(&test_w).unwrap()
                        }
                    };
                    maes.push(mae(&test_w.targets, &preds).unwrap());
                }
                maes.sort_by(f64::total_cmp);
                eprintln!(
                    "{family:<9} {kind:<10} median MAE {:.5}  rmse-ish n/a  [{:.1?}/run]",
                    maes[maes.len() / 2],
                    t.elapsed() / net_runs as u32
                );
                let _ = rmse(&test_w.targets, &test_w.targets);
            }
        }
    }
}
