use std::path::Path;

use darkir_cli::commands::{run_variant, suite, SUITES};
use darkir_cli::config::RunConfig;
use darkir_core::autodiff::Tape;
use darkir_core::degrade::{procedural_image, synth_dataset, ParamRanges};
use darkir_core::loss::total_loss;
use darkir_core::model::DarkIr;
use darkir_core::train::{load_pairs, Pair};
use darkir_core::Error;

fn toy() -> RunConfig {
    let text = "seed=5\nmodel.width=4\nmodel.enc_blocks=1,1,1\nmodel.mid_blocks=1\n\
                model.dec_blocks=1,1,1\ntrain.total_steps=2\ntrain.batch_size=1\n\
                train.crop_size=16\nprofile.size=64x64\n";
    RunConfig::parse(text, Path::new("/")).unwrap()
}

fn pairs() -> Vec<Pair> {
    let dir = tempfile::tempdir().unwrap();
    let clean: Vec<_> = (0..2).map(|i| procedural_image(16, 16, i)).collect();
    synth_dataset(&clean, &ParamRanges::default(), 2, dir.path(), 1).unwrap();
    load_pairs(dir.path()).unwrap()
}

#[test]
fn suites_carry_the_published_row_names() {
    let cfg = toy();
    let names = |s: &str| -> Vec<String> { suite(s, &cfg).unwrap().into_iter().map(|v| v.name).collect() };
    let blocks = names("blocks");
    assert!(blocks.len() >= 5);
    for want in ["All EBlock", "All DBlock", "All NAFBlock", "DarkIR"] {
        assert!(blocks.iter().any(|n| n == want), "{want} missing from {blocks:?}");
    }
    assert_eq!(names("attention"), ["LKA", "Di-SpAM"]);
    assert_eq!(names("skip"), ["1DLUT", "1DLUT-double", "Single Addition"]);
    assert_eq!(names("loss").len(), 3);
    assert!(matches!(suite("colour", &cfg), Err(Error::Config(_))));
    for s in SUITES {
        for v in suite(s, &cfg).unwrap() {
            v.model.validate().unwrap();
            v.loss.validate().unwrap();
        }
    }
}

#[test]
fn every_variant_builds_and_trains() {
    let cfg = toy();
    let data = pairs();
    for s in SUITES {
        for v in suite(s, &cfg).unwrap() {
            let row = run_variant(&v, &cfg, &data, &data).unwrap();
            assert_eq!(row.split(',').count(), 5, "{row}");
            assert!(row.starts_with(&v.name));
        }
    }
}

#[test]
fn identical_variants_score_identically() {
    let cfg = toy();
    let data = pairs();
    let v = &suite("attention", &cfg).unwrap()[1];
    assert_eq!(
        run_variant(v, &cfg, &data, &data).unwrap(),
        run_variant(&v.clone(), &cfg, &data, &data).unwrap()
    );
}

#[test]
fn pixel_only_row_trains_on_the_pixel_term_alone() {
    let cfg = toy();
    let data = pairs();
    let v = &suite("loss", &cfg).unwrap()[0];
    assert_eq!(v.name, "L_pixel");
    let net = DarkIr::<f64>::build(&v.model, 0).unwrap();
    let tape = Tape::new();
    let y = tape.constant(data[0].y.cast());
    let x = tape.constant(data[0].x.cast());
    let (xhat, low) = net.forward(&tape, y).unwrap();
    let t = total_loss(&tape, x, xhat, low, &v.loss, None).unwrap();
    let total = tape.value(t.total).unwrap().item();
    let pixel = tape.value(t.parts.pixel).unwrap().item();
    assert_eq!(total, pixel);
}

#[test]
fn dispam_is_cheaper_than_lka() {
    let cfg = toy();
    let data = pairs();
    let rows: Vec<Vec<f64>> = suite("attention", &cfg)
        .unwrap()
        .iter()
        .map(|v| {
            let row = run_variant(v, &cfg, &data, &data).unwrap();
            row.split(',').skip(1).take(2).map(|x| x.parse().unwrap()).collect()
        })
        .collect();
    let (lka, dispam) = (&rows[0], &rows[1]);
    assert!(dispam[0] < lka[0] && dispam[1] < lka[1], "{lka:?} {dispam:?}");
}
