// Scratch diagnostics (development only).
use difclue::config::ExperimentConfig;
use difclue::experiment;
use difclue_core::counterfactual::{generate_counterfactual, PerturbationSpec};
use difclue_core::linalg::{dist_sq, dot, norm};

fn main() {
    let cfg = ExperimentConfig::shapes_default();
    let dataset = experiment::stage_generate(&cfg).unwrap();
    let mixed = experiment::stage_mix(&cfg, &dataset).unwrap();
    let models = experiment::stage_train(&cfg, &dataset).unwrap();
    let clustering = experiment::stage_cluster(&cfg, &models.dae, &mixed).unwrap();
    let c = clustering.clusters.centroids();
    println!("centroid dist {:.3}, norms {:.3} {:.3}", dist_sq(&c[0], &c[1]).sqrt(), norm(&c[0]), norm(&c[1]));
    let negs = mixed.negatives();
    let mut neg_mean = vec![0.0; cfg.dae.latent_dim];
    for s in &negs {
        let z = models.dae.encode_semantic(&s.values).unwrap().0;
        for (a, b) in neg_mean.iter_mut().zip(&z) { *a += b / negs.len() as f64; }
    }
    println!("neg norm {:.3}, to c0 {:.3}, to c1 {:.3}", norm(&neg_mean),
        dist_sq(&neg_mean, &c[0]).sqrt(), dist_sq(&neg_mean, &c[1]).sqrt());
    for j in 0..2 {
        let w = &clustering.directions.normalized_directions()[j];
        let to_c: Vec<f64> = c[j].iter().zip(&neg_mean).map(|(a, b)| a - b).collect();
        println!("cluster {j}: along w {:.3} of |to_c| {:.3}", dot(w, &to_c), norm(&to_c));
    }
    // Detailed sweep on one negative toward cluster 0.
    let s = negs[0];
    for alpha in [0.0f64, 1.0, 2.0, 3.0, 5.0, 8.0, 12.0] {
        let rec = generate_counterfactual(&models.dae, &clustering.directions, &models.oracle,
            s.id, &s.values, &PerturbationSpec { target_cluster: 0, alpha, steps: cfg.dae.ddim_steps }).unwrap();
        let probs: Vec<String> = rec.oracle_probs.iter().map(|p| format!("{p:.3}")).collect();
        // How far is the decode from each class's mean image?
        let mean_of = |class: usize| -> Vec<f64> {
            let mut m = vec![0.0; 256];
            let list: Vec<&difclue_core::data::Sample> = mixed.samples.iter().filter(|x| x.mode == class).collect();
            for mm in &list { for (a, v) in m.iter_mut().zip(&mm.values) { *a += v / list.len() as f64; } }
            m
        };
        let d0 = dist_sq(&rec.decoded, &mean_of(0)).sqrt();
        let d1 = dist_sq(&rec.decoded, &mean_of(1)).sqrt();
        let d2 = dist_sq(&rec.decoded, &mean_of(2)).sqrt();
        let inrange = rec.decoded.iter().filter(|v| (0.0..=1.0).contains(*v)).count();
        println!("alpha {alpha}: probs {probs:?} dist-to-class-means [{d0:.2} {d1:.2} {d2:.2}] in[0,1] {inrange}/256");
    }
}
