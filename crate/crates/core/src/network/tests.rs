use super::*;

fn small(modalities: &[(&str, usize)]) -> NetworkConfig {
    let mut cfg = NetworkConfig::new(modalities, 3, 4).with_uniform_width(6);
    cfg.discriminator_widths = vec![5];
    cfg
}

fn features(rows: usize, cols: usize, offset: f64) -> DenseMatrix {
    DenseMatrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|i| ((i as f64 + offset) * 0.37).sin()).collect(),
    )
    .unwrap()
}

fn batch(cfg: &NetworkConfig, n: usize) -> DocumentBatch {
    DocumentBatch {
        features: cfg
            .pathways
            .iter()
            .enumerate()
            .map(|(m, p)| features(n, p.input_dim, m as f64 * 11.0))
            .collect(),
        labels: (0..n).map(|i| i % cfg.num_classes_target).collect(),
    }
}

fn source(cfg: &NetworkConfig, n: usize) -> SourceBatch {
    SourceBatch {
        features: features(n, cfg.image().input_dim, 100.0),
        labels: (0..n).map(|i| i % cfg.num_classes_source).collect(),
    }
}

#[test]
fn two_modalities_give_source_plus_two_pathways() {
    let net = StarNetwork::build(small(&[("image", 5), ("text", 4)]), 0).unwrap();
    let names: Vec<&str> = net.groups().iter().map(|g| g.name.as_str()).collect();
    assert_eq!(names, ["source", "pathway/image", "pathway/text", "common", "discriminator"]);
    assert_eq!(net.layout().pathways, vec![1, 2]);
}

#[test]
fn discriminator_has_one_output_per_modality() {
    let mods = [("image", 5), ("text", 4), ("audio", 3), ("video", 7), ("3d", 2)];
    let net = StarNetwork::build(small(&mods), 0).unwrap();
    let z = DenseMatrix::zeros(2, 6);
    assert_eq!(net.discriminate(&z).unwrap().shape(), (2, 5));
}

#[test]
fn same_seed_builds_identical_parameters() {
    let cfg = small(&[("image", 5), ("text", 4)]);
    let a = StarNetwork::build(cfg.clone(), 42).unwrap();
    let b = StarNetwork::build(cfg.clone(), 42).unwrap();
    let c = StarNetwork::build(cfg, 43).unwrap();
    assert_eq!(a.groups(), b.groups());
    assert_ne!(a.groups(), c.groups());
}

#[test]
fn source_pathway_starts_as_copy_of_image_pathway() {
    let net = StarNetwork::build(small(&[("image", 5), ("text", 4)]), 1).unwrap();
    let src = &net.groups()[0];
    let img = &net.groups()[1];
    assert_eq!(&src.matrices[..img.matrices.len()], &img.matrices[..]);
    assert_eq!(src.labels[0], "fc6-S.weight");
    assert_eq!(src.labels.last().unwrap(), "fc8-S.bias");
}

#[test]
fn common_representation_shape() {
    let net = StarNetwork::build(small(&[("image", 5), ("text", 4)]), 0).unwrap();
    let z = net.common_representation("text", &features(7, 4, 0.0)).unwrap();
    assert_eq!(z.shape(), (7, 6));
    assert!(z.values().iter().all(|&v| v >= 0.0));
}

#[test]
fn no_source_drops_source_group() {
    let mut cfg = small(&[("image", 5), ("text", 4)]);
    cfg.ablation.no_source = true;
    let net = StarNetwork::build(cfg.clone(), 0).unwrap();
    assert_eq!(net.layout().source, None);
    assert_eq!(net.groups()[0].name, "pathway/image");
    let (tape, terms, _) = net.objective(&batch(&cfg, 4), None).unwrap();
    assert!(terms.st.is_none() && terms.sds.is_none());
    assert!(terms.ct.is_some() && terms.sc.is_some() && terms.mc.is_some());
    drop(tape);
}

#[test]
fn no_sl_net_uses_per_modality_heads_without_discriminator() {
    let mut cfg = small(&[("image", 5), ("text", 4)]);
    cfg.ablation.no_sl_net = true;
    let net = StarNetwork::build(cfg.clone(), 0).unwrap();
    assert_eq!(net.layout().discriminator, None);
    let common = &net.groups()[net.layout().common];
    assert_eq!(common.labels, ["image/fc10.weight", "image/fc10.bias", "text/fc10.weight", "text/fc10.bias"]);
    assert!(net.common_representation("image", &features(2, 5, 0.0)).is_err());
    let e = net.embed("text", &features(3, 4, 0.0)).unwrap();
    assert_eq!(e.shape(), (3, 3));
}

#[test]
fn embeddings_are_probability_vectors() {
    let net = StarNetwork::build(small(&[("image", 5), ("text", 4)]), 3).unwrap();
    let e = net.embed("image", &features(9, 5, 2.0)).unwrap();
    for r in 0..e.rows() {
        assert!((e.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(e.row(r).iter().all(|&p| p > 0.0));
    }
}

#[test]
fn zero_classifier_gives_uniform_embedding() {
    let mut net = StarNetwork::build(small(&[("image", 5), ("text", 4)]), 3).unwrap();
    let common = net.layout().common;
    let g = &mut net.groups_mut()[common];
    let n = g.matrices.len();
    for m in &mut g.matrices[n - 2..] {
        m.values_mut().fill(0.0);
    }
    let e = net.embed("text", &features(4, 4, 1.0)).unwrap();
    assert!(e.values().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn embedding_is_batch_invariant() {
    let net = StarNetwork::build(small(&[("image", 5), ("text", 4)]), 5).unwrap();
    let x = features(6, 4, 0.5);
    let all = net.embed("text", &x).unwrap();
    for r in 0..6 {
        let one = net.embed("text", &x.row_matrix(r)).unwrap();
        assert_eq!(one.row(0), all.row(r));
    }
}

#[test]
fn no_adver_leaves_inference_path_unchanged() {
    let cfg = small(&[("image", 5), ("text", 4)]);
    let full = StarNetwork::build(cfg.clone(), 8).unwrap();
    let mut na_cfg = cfg;
    na_cfg.ablation.no_adver = true;
    let na = StarNetwork::build(na_cfg, 8).unwrap();
    // the discriminator is initialized last, so every other group matches
    assert_eq!(&full.groups()[..full.groups().len() - 1], na.groups());
    let x = features(3, 5, 0.0);
    assert_eq!(full.embed("image", &x).unwrap(), na.embed("image", &x).unwrap());
}

#[test]
fn unknown_modality_and_bad_width_are_rejected() {
    let net = StarNetwork::build(small(&[("image", 5), ("text", 4)]), 0).unwrap();
    assert!(matches!(net.embed("audio", &features(1, 5, 0.0)), Err(Error::Config(_))));
    assert!(matches!(net.embed("text", &features(1, 5, 0.0)), Err(Error::Shape { .. })));
}

#[test]
fn objective_records_every_term() {
    let cfg = small(&[("image", 5), ("text", 4), ("audio", 3)]);
    let net = StarNetwork::build(cfg.clone(), 0).unwrap();
    let (tape, terms, root) = net.objective(&batch(&cfg, 4), Some(&source(&cfg, 5))).unwrap();
    for t in [terms.st, terms.sds, terms.ct, terms.sc, terms.mc] {
        assert!(tape.scalar(t.unwrap()).unwrap().is_finite());
    }
    assert!(tape.scalar(root).unwrap().is_finite());
}

#[test]
fn missing_source_batch_is_an_error() {
    let cfg = small(&[("image", 5), ("text", 4)]);
    let net = StarNetwork::build(cfg.clone(), 0).unwrap();
    assert!(net.objective(&batch(&cfg, 2), None).is_err());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let cfg = small(&[("image", 5), ("text", 4)]);
    let net = StarNetwork::build(cfg.clone(), 11).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&net, &mut bytes).unwrap();
    let back = restore(cfg, read_checkpoint(&bytes[..]).unwrap()).unwrap();
    assert_eq!(back.groups(), net.groups());
    assert_eq!(checkpoint_digest(&back), checkpoint_digest(&net));
}

#[test]
fn checkpoint_refuses_other_config() {
    let cfg = small(&[("image", 5), ("text", 4)]);
    let net = StarNetwork::build(cfg.clone(), 11).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&net, &mut bytes).unwrap();
    let mut other = cfg;
    other.weights.lambda = 0.2;
    assert!(matches!(restore(other, read_checkpoint(&bytes[..]).unwrap()), Err(Error::Checkpoint(_))));
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let cfg = small(&[("image", 5), ("text", 4)]);
    let net = StarNetwork::build(cfg, 11).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&net, &mut bytes).unwrap();
    assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    bytes.push(0);
    assert!(read_checkpoint(&bytes[..]).is_err());
}
