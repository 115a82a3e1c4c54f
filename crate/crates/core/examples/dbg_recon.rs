use diform_core::field::*;
use diform_core::objective::*;
use diform_core::reconstructor::*;
use diform_core::sampling::*;
use diform_core::synth::*;
use diform_core::trainer::*;

fn main() {
    let (dataset, _) = make_dataset(2, 2, 128, 40).unwrap();
    for epochs in [120usize, 400] {
        let cfg = TrainConfig {
            epochs,
            batch_size: 4,
            learning_rate: 2e-4,
            sampler: SamplerConfig::desk(64),
            field: FieldConfig { pe_bands: 2, identity_dim: 4, deformation_dim: 4, hidden_width: 16, n_layers: 8, skip_layer: 4 },
            seed: 41,
            checkpoint_every: 0,
            ..TrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let (state, logs) = train(&dataset, &cfg).unwrap();
        println!("epochs {} train {:?} final loss {:.4}", epochs, t0.elapsed(), logs.last().unwrap().mean.total);
        let shape = &dataset.shapes[0];
        let cloud = &shape.cloud;
        let batch = make_batch(cloud, &SamplerConfig::desk(64), 7).unwrap();
        let zero = LatentPair::zeros(&state.model.config);
        let trained_codes = state.codes.pair(&shape.subject, &shape.sample).unwrap();
        let w = LossWeights::default();
        let fz = DecodedField { model: &state.model, codes: &zero };
        let e0 = total_energy(&fz, &zero, &batch, &w, None).unwrap().total;
        let ft = DecodedField { model: &state.model, codes: &trained_codes };
        let et = total_energy(&ft, &trained_codes, &batch, &w, None).unwrap().total;
        println!("  energy zero-code {:.4} trained-code {:.4}", e0, et);
        let rcfg = ReconConfig { iterations: 200, sampler: SamplerConfig::desk(32), seed: 13, ..ReconConfig::default() };
        let t1 = std::time::Instant::now();
        let out = reconstruct_single(&state.model, cloud, &rcfg).unwrap();
        let lead: f64 = out.trace[..100].iter().sum::<f64>() / 100.0;
        let trail: f64 = out.trace[100..].iter().sum::<f64>() / 100.0;
        println!("  recon {:?} lead {:.4} trail {:.4} report {:.4}", t1.elapsed(), lead, trail, out.report.total);
    }
}
