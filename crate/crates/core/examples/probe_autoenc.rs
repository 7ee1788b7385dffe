use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stylevc_core::config::RunConfig;
use stylevc_core::data::synth::{generate_synthetic_corpus, SAMPLE_RATE};
use stylevc_core::io::wav;
use stylevc_core::nn::{bind, Adam, AdamConfig, Graph};
use stylevc_core::pipeline;
use stylevc_core::ser::train::train_ser;
use stylevc_core::stargan::nets::{BoundGenerator, Generator, Mode, SpectralMapper};
use stylevc_core::stargan::{GanConfig, Trainer, TrainOptions};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.seed = 11;
    cfg.cache_dir = dir.path().join("cache");
    cfg.data.audio_dir = dir.path().join("audio");
    cfg.data.emotions = vec!["neutral".into(), "happy".into()];
    cfg.features.mel.mel_bins = 20;
    cfg.ser.conv_channels = vec![4, 8];
    cfg.ser.lstm_hidden = 16;
    cfg.ser.attention_dim = 8;
    cfg.ser.batch_size = 8;
    cfg.ser.steps = 120;
    cfg.ser.learning_rate = 2e-3;
    cfg.ser.crop_frames = 56;
    let corpus = generate_synthetic_corpus(2, 2, 8, cfg.seed).unwrap();
    std::fs::create_dir_all(&cfg.data.audio_dir).unwrap();
    for (id, samples) in &corpus.waveforms {
        wav::write_wav(&cfg.data.audio_dir.join(format!("{id}.wav")), SAMPLE_RATE, samples).unwrap();
    }
    pipeline::extract(&cfg, &corpus.manifest, 2).unwrap();
    let dataset = pipeline::build_ser_dataset(&cfg, &corpus.manifest).unwrap();
    let trained = train_ser(&dataset, &cfg.ser_arch(), &cfg.ser_train(), None).unwrap();
    pipeline::build_styles(&cfg, &corpus.manifest, &trained.model, 2).unwrap();
    let data = pipeline::build_train_data(&cfg, &corpus.manifest).unwrap();

    // data sanity
    let mut minv = f64::INFINITY;
    let mut maxv = f64::NEG_INFINITY;
    let mut meanabs = 0.0;
    let mut count = 0.0;
    for item in &data.items {
        for &v in item.mceps.iter() {
            minv = minv.min(v);
            maxv = maxv.max(v);
            meanabs += v.abs();
            count += 1.0;
        }
    }
    println!("normalized mceps: min {minv:.2} max {maxv:.2} mean|x| {:.3}", meanabs / count);
    diagnostics(&data);

    // (a) pure identity training on real crops
    for lr in [3e-4, 1e-3] {
    println!("==== identity training at lr {lr}");
    let gan_cfg = GanConfig::tiny(2);
    let mut gen = Generator::new(&gan_cfg, 7);
    let mut adam = Adam::new(
        AdamConfig { learning_rate: lr, beta1: 0.5, beta2: 0.999, eps: 1e-8 },
        &gen.params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for step in 0..600 {
        let mut x0 = ArrayD::<f64>::zeros(IxDyn(&[4, 36, 128]));
        let mut s0 = ArrayD::<f64>::zeros(IxDyn(&[4, 64]));
        let mut c0 = ArrayD::<f64>::zeros(IxDyn(&[4, 2]));
        for b in 0..4 {
            let item = &data.items[rng.random_range(0..data.items.len())];
            let t = item.mceps.shape()[1];
            let off = if t > 128 { rng.random_range(0..t - 128) } else { 0 };
            for d in 0..36 {
                for tt in 0..128 {
                    x0[[b, d, tt]] = item.mceps[[d, (off + tt).min(t - 1)]];
                }
            }
            for (j, &v) in item.style.iter().enumerate() { s0[[b, j]] = v; }
            c0[[b, item.speaker]] = 1.0;
        }
        let mut g = Graph::new();
        let bound = bind(&mut g, &gen.params, true);
        let x = g.leaf(x0);
        let s = g.leaf(s0);
        let c = g.leaf(c0);
        let mapper = BoundGenerator { net: &gen, bound: &bound, mode: Mode::Train };
        let y = mapper.map(&mut g, x, s, c);
        let diff = g.sub(y, x);
        let absd = g.abs(diff);
        let loss = g.mean_all(absd);
        if step % 50 == 0 || step == 599 {
            let yv = g.value(y);
            let ymean: f64 = yv.iter().map(|v| v.abs()).sum::<f64>() / yv.len() as f64;
            println!("identity step {step}: loss {:.4} mean|y| {ymean:.4}", g.scalar(loss));
        }
        g.backward(loss);
        let grads = bound.grads(&g);
        adam.apply(&mut gen.params, &grads);
    }
    }

    // (b) full objective via the Trainer at lr 3e-4
    let gan_cfg = GanConfig::tiny(2);
    let opts = TrainOptions {
        iterations: 0,
        batch_size: 4,
        crop_frames: 128,
        learning_rate: 3e-4,
        seed: 23,
        checkpoint_every: 0,
        ..Default::default()
    };
    let mut trainer = Trainer::new(&data, &gan_cfg, opts).unwrap();
    for step in 0..300u64 {
        let b = trainer.train_step().unwrap();
        if step % 75 == 0 || step == 299 {
            println!(
                "full step {step}: l_g {:.3} l_d {:.3} adv_g {:.3} dom_g {:.3} cyc {:.3} id {:.3}",
                b.l_g, b.l_d, b.adv_g, b.dom_g, b.cyc, b.id
            );
        }
    }
}

#[allow(dead_code)]
fn diagnostics(data: &stylevc_core::stargan::TrainData) {
    // per-row stats over the first items: lag-1 autocorrelation and the L1
    // of the best constant-per-row predictor
    let mut lag1 = vec![0.0; 36];
    let mut const_l1 = vec![0.0; 36];
    let mut n_items = 0.0;
    for item in data.items.iter().take(8) {
        let t = item.mceps.shape()[1];
        for d in 0..36 {
            let row: Vec<f64> = (0..t).map(|tt| item.mceps[[d, tt]]).collect();
            let mean = row.iter().sum::<f64>() / t as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
            let mut num = 0.0;
            for tt in 1..t {
                num += (row[tt] - mean) * (row[tt - 1] - mean);
            }
            lag1[d] += num / ((t - 1) as f64) / var.max(1e-9);
            const_l1[d] += row.iter().map(|v| (v - mean).abs()).sum::<f64>() / t as f64;
        }
        n_items += 1.0;
    }
    for d in [0, 1, 2, 5, 10, 15, 20, 25, 30, 35] {
        println!(
            "row {d}: lag1 {:.3} const-pred L1 {:.3}",
            lag1[d] / n_items,
            const_l1[d] / n_items
        );
    }
}
