use diform_core::field::{sdf_eval, FieldConfig};
use diform_core::sampling::SamplerConfig;
use diform_core::synth::make_dataset;
use diform_core::trainer::{init_state, train_epochs, TrainConfig};
use std::time::Instant;

fn main() {
    let (mut ds, _) = make_dataset(1, 1, 512, 12).unwrap();
    ds.shapes.truncate(1);
    for (pe, upto2) in [(4usize, 4000usize), (8, 2000)] {
        let field = FieldConfig { pe_bands: pe, identity_dim: 8, deformation_dim: 8, hidden_width: 32, n_layers: 8, skip_layer: 4 };
        let base = TrainConfig {
            epochs: 600, batch_size: 1, learning_rate: 2e-4,
            sampler: SamplerConfig::desk(384), field,
            seed: 11, checkpoint_every: 0, ..TrainConfig::default()
        };
        let t0 = Instant::now();
        let mut state = init_state(&ds, &base).unwrap();
        train_epochs(&mut state, &ds, &base, 600, |_, _| Ok(())).unwrap();
        let mut fine = base.clone();
        fine.learning_rate = 2e-5;
        train_epochs(&mut state, &ds, &fine, upto2, |_, _| Ok(())).unwrap();
        let pair = state.codes.pair("s000", "d000").unwrap();
        let mean_abs: f64 = ds.shapes[0].cloud.points.iter()
            .map(|p| sdf_eval(&state.model, &pair, p).abs()).sum::<f64>() / ds.shapes[0].cloud.len() as f64;
        println!("pe={pe} upto2={upto2} mean|f|={mean_abs:.4} secs={:.1}", t0.elapsed().as_secs_f64());
    }
}
