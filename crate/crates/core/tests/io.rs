use std::path::PathBuf;

use ialseg::data::netpbm::{load_pgm, load_ppm, save_pgm, save_ppm, RgbImage};
use ialseg::data::{scene_hierarchy, Dataset, DatasetMeta, SceneConfig};
use ialseg::net::checkpoint;
use ialseg::net::{NetConfig, Network, Variant};
use ialseg::train::RunConfig;
use ialseg::{ImportanceHierarchy, LabelMap};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_hierarchies_match_the_builtin_tables() {
    for (file, builtin) in [
        ("camvid.json", ImportanceHierarchy::camvid()),
        ("cityscapes.json", ImportanceHierarchy::cityscapes()),
        ("scene.json", scene_hierarchy()),
    ] {
        let loaded = ImportanceHierarchy::load(&configs().join(file)).unwrap();
        assert_eq!(loaded, builtin, "{file}");
        assert_eq!(ImportanceHierarchy::parse(&loaded.to_json()).unwrap(), loaded);
    }
}

#[test]
fn shipped_run_configs_parse() {
    let default = RunConfig::load(&configs().join("train_default.json")).unwrap();
    assert_eq!(default, RunConfig::new(0));
    let scene: SceneConfig =
        serde_json::from_str(&std::fs::read_to_string(configs().join("scene_default.json")).unwrap()).unwrap();
    assert_eq!(scene, SceneConfig::default());
    RunConfig::load(&configs().join("train_dir.json")).unwrap();
}

#[test]
fn run_config_round_trips_through_json() {
    let mut cfg = RunConfig::new(42);
    cfg.net.variant = Variant::Bierf;
    cfg.optim.epochs = 3;
    assert_eq!(RunConfig::parse(&cfg.to_json()).unwrap(), cfg);
}

#[test]
fn hierarchy_json_rejects_broken_partitions() {
    let h = ImportanceHierarchy::camvid();
    let mut v: serde_json::Value = serde_json::from_str(&h.to_json()).unwrap();
    let moved = v["groups"][1][0].clone();
    v["groups"][0].as_array_mut().unwrap().push(moved);
    assert!(ImportanceHierarchy::parse(&v.to_string()).is_err());
}

#[test]
fn dataset_directory_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = SceneConfig {
        height: 16,
        width: 24,
        object_size: [2, 6],
        seed: 11,
        ..SceneConfig::default()
    };
    let ds = Dataset::generate(&scene, 5, 3).unwrap();
    let meta = DatasetMeta::new("train", 5, 3, &scene, &scene_hierarchy());
    ds.save_dir(tmp.path(), &meta).unwrap();
    assert!(tmp.path().join("images/00002.ppm").exists());

    let back = Dataset::load_dir(tmp.path()).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in ds.samples().iter().zip(back.samples()) {
        assert_eq!(a.image, b.image);
        assert_eq!(a.labels, b.labels);
    }
    let meta = DatasetMeta::load(tmp.path()).unwrap();
    assert_eq!(meta.hierarchy().unwrap(), scene_hierarchy());
}

#[test]
fn netpbm_files_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let image = RgbImage::new(3, 5, (0..45).map(|v| (v * 37 % 256) as u8).collect()).unwrap();
    save_ppm(&image, &tmp.path().join("a.ppm")).unwrap();
    assert_eq!(load_ppm(&tmp.path().join("a.ppm")).unwrap(), image);

    let labels = LabelMap::new(4, 2, vec![0, 255, 3, 9, 1, 1, 200, 7]).unwrap();
    save_pgm(&labels, &tmp.path().join("a.pgm")).unwrap();
    assert_eq!(load_pgm(&tmp.path().join("a.pgm")).unwrap(), labels);
}

#[test]
fn checkpoint_restores_a_network_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let net = Network::<f32>::new(NetConfig {
        init_seed: 3,
        ..NetConfig::default()
    })
    .unwrap();
    let path = tmp.path().join("net.ckpt");
    checkpoint::save(net.params(), &path).unwrap();

    let mut other = Network::<f32>::new(NetConfig::default()).unwrap();
    assert_ne!(other.params(), net.params());
    checkpoint::load_into(other.params_mut(), &path).unwrap();
    assert_eq!(other.params(), net.params());

    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], checkpoint::MAGIC);
    assert!(checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn checkpoint_rejects_a_different_architecture() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("erf.ckpt");
    checkpoint::save(Network::<f32>::new(NetConfig::default()).unwrap().params(), &path).unwrap();
    let mut bierf = Network::<f32>::new(NetConfig {
        variant: Variant::Bierf,
        ..NetConfig::default()
    })
    .unwrap();
    assert!(checkpoint::load_into(bierf.params_mut(), &path).is_err());
}
