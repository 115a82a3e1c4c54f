use diform_core::field::*;
use nalgebra::Vector3;
fn main() {
    let cfg = FieldConfig { hidden_width: 32, pe_bands: 4, identity_dim: 8, deformation_dim: 8, n_layers: 8, skip_layer: 4 };
    let model = init_model(&cfg, 3);
    let zero = LatentPair::zeros(&cfg);
    for t in [0.0, 0.25, 0.5, 0.75, 1.0, 1.2, 1.5] {
        let fx = sdf_eval(&model, &zero, &Vector3::new(t, 0.0, 0.0));
        let fy = sdf_eval(&model, &zero, &Vector3::new(0.0, t, 0.0));
        let fz = sdf_eval(&model, &zero, &Vector3::new(0.0, 0.0, t));
        println!("t={t:.2} fx={fx:+.4} fy={fy:+.4} fz={fz:+.4}");
    }
}
