// Scratch diagnostics for latent geometry (development only).
use difclue::config::ExperimentConfig;
use difclue::experiment;
use difclue_core::counterfactual::alpha_sweep;
use difclue_core::linalg::{dist_sq, norm};

fn main() {
    let cfg = ExperimentConfig::default();
    let dataset = experiment::stage_generate(&cfg).unwrap();
    let mixed = experiment::stage_mix(&cfg, &dataset).unwrap();
    let models = experiment::stage_train(&cfg, &dataset).unwrap();
    let clustering = experiment::stage_cluster(&cfg, &models.dae, &mixed).unwrap();

    let c = clustering.clusters.centroids();
    println!("centroid distance: {:.3}", dist_sq(&c[0], &c[1]).sqrt());
    println!("centroid norms: {:.3} {:.3}", norm(&c[0]), norm(&c[1]));
    println!("cluster->class map: {:?}", clustering.cluster_class);

    let negs = mixed.negatives();
    let mut neg_mean = vec![0.0; cfg.dae.latent_dim];
    for s in &negs {
        let z = models.dae.encode_semantic(&s.values).unwrap().0;
        for (a, b) in neg_mean.iter_mut().zip(&z) {
            *a += b / negs.len() as f64;
        }
    }
    println!(
        "neg-mean to centroids: {:.3} {:.3}, neg norm {:.3}",
        dist_sq(&neg_mean, &c[0]).sqrt(),
        dist_sq(&neg_mean, &c[1]).sqrt(),
        norm(&neg_mean)
    );

    // Positive code spread.
    let pos = mixed.positives();
    let mut within = 0.0;
    for (s, &a) in pos.iter().zip(&clustering.assignments) {
        let z = models.dae.encode_semantic(&s.values).unwrap().0;
        within += dist_sq(&z, &c[a]);
    }
    println!("within-cluster rms: {:.3}", (within / pos.len() as f64).sqrt());

    // Wide alpha sweep on a few negatives toward each cluster.
    let alphas: Vec<f64> = (0..61).map(|i| i as f64 * 0.5).collect();
    for cluster in 0..2 {
        let class = clustering.cluster_class[&cluster];
        for s in negs.iter().take(3) {
            let sweep = alpha_sweep(
                &models.dae,
                &clustering.directions,
                &models.oracle,
                &s.values,
                cluster,
                class,
                &alphas,
                cfg.dae.ddim_steps,
            )
            .unwrap();
            let flip = sweep.iter().find(|(_, p)| *p > 0.5).map(|(a, _)| *a);
            println!(
                "neg {} -> cluster {} (class {class}): p(0)={:.4} p(3)={:.4} p(10)={:.4} p(30)={:.4} flip at {:?}",
                s.id,
                cluster,
                sweep[0].1,
                sweep[6].1,
                sweep[20].1,
                sweep[60].1,
                flip
            );
        }
    }
}
