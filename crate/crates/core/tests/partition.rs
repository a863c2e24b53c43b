//! Which parameter groups each loss term reaches.

mod common;

use common::checks::reached;

const PATHWAYS: [&str; 3] = ["pathway/image", "pathway/text", "pathway/audio"];

#[test]
fn st_reaches_source_and_image_pathway() {
    assert_eq!(reached("ST"), ["source", "pathway/image"]);
}

#[test]
fn sds_reaches_only_source() {
    assert_eq!(reached("SDS"), ["source"]);
}

#[test]
fn ct_reaches_every_target_pathway_only() {
    assert_eq!(reached("CT"), PATHWAYS);
}

#[test]
fn sc_reaches_pathways_and_common() {
    let mut want: Vec<&str> = PATHWAYS.to_vec();
    want.push("common");
    assert_eq!(reached("SC"), want);
}

#[test]
fn mc_reaches_pathways_common_and_discriminator() {
    let mut want: Vec<&str> = PATHWAYS.to_vec();
    want.extend(["common", "discriminator"]);
    assert_eq!(reached("MC"), want);
}

#[test]
fn combined_objective_reaches_every_group() {
    assert_eq!(
        reached("total"),
        ["source", "pathway/image", "pathway/text", "pathway/audio", "common", "discriminator"]
    );
}
