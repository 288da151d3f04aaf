use fakepcd_core::attribution::{
    assign_profile, mean_source_distance, percentile, select_threshold, verdict_for, AnchorSet, DistanceProfile,
};
use fakepcd_core::nnet::{encode_points, init_model, load_checkpoint, save_checkpoint, Architecture};
use fakepcd_core::pcd::{chamfer_distance, read_point_cloud, write_point_cloud, Format, Point3, PointCloud};
use fakepcd_core::rng::SeededRng;
use fakepcd_core::Error;
use proptest::prelude::*;

fn cloud(seed: u64, n: usize) -> PointCloud {
    let mut rng = SeededRng::new(seed);
    PointCloud::new((0..n).map(|_| Point3::new(rng.normal(), rng.normal(), rng.normal())).collect()).unwrap()
}

fn anchors(seed: u64, k: usize, n: usize, d: usize) -> AnchorSet {
    let mut rng = SeededRng::new(seed);
    let sets = (0..k)
        .map(|j| (0..n).map(|_| (0..d).map(|i| rng.normal() * 0.3 + if i == j { 2.0 } else { 0.0 }).collect()).collect())
        .collect();
    AnchorSet::from_anchors((0..k).map(|j| format!("s{j}")).collect(), sets, seed).unwrap()
}

proptest! {
    #[test]
    fn percentile_is_a_member(seq in prop::collection::vec(-1e3f64..1e3, 1..60), p in 0.001f64..=100.0) {
        let v = percentile(&seq, p).unwrap();
        prop_assert!(seq.contains(&v));
        let at_most = seq.iter().filter(|&&x| x <= v).count() as f64;
        prop_assert!(at_most * 100.0 >= p * seq.len() as f64);
    }

    #[test]
    fn unified_threshold_is_the_smallest_source_percentile(seed in any::<u64>(), p in 1.0f64..=100.0) {
        let set = anchors(seed, 3, 12, 4);
        let t = select_threshold(&set, p).unwrap().threshold;
        for seq in &set.intra {
            prop_assert!(t <= percentile(seq, p).unwrap());
        }
        prop_assert!(set.intra.iter().any(|seq| percentile(seq, p).unwrap() == t));
    }

    #[test]
    fn verdict_survives_common_rescaling(d in prop::collection::vec(0.0f64..10.0, 1..6), t in 0.0f64..10.0, c in 1e-3f64..1e3) {
        let scaled: Vec<f64> = d.iter().map(|x| x * c).collect();
        prop_assert_eq!(
            verdict_for(&DistanceProfile { distances: d }, t),
            verdict_for(&DistanceProfile { distances: scaled }, t * c)
        );
    }

    #[test]
    fn encoder_ignores_point_order(seed in any::<u64>(), n in 1usize..40) {
        let arch = Architecture { encoder: vec![3, 8, 12], classifier: None, projection: Some(vec![12, 6]) };
        let model = init_model(&arch, seed).unwrap();
        let c = cloud(seed ^ 1, n);
        let mut pts = c.points().to_vec();
        SeededRng::new(seed).shuffle(&mut pts);
        let a = encode_points(&model, c.points()).unwrap();
        let b = encode_points(&model, &pts).unwrap();
        prop_assert_eq!(a.global, b.global);
        prop_assert_eq!(a.embedding, b.embedding);
    }

    #[test]
    fn chamfer_is_symmetric_and_zero_on_self(seed in any::<u64>(), n in 1usize..30, m in 1usize..30) {
        let a = cloud(seed, n);
        let b = cloud(seed.wrapping_add(1), m);
        prop_assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        let ab = chamfer_distance(&a, &b).unwrap();
        prop_assert!((ab - chamfer_distance(&b, &a).unwrap()).abs() <= 1e-12 * ab.max(1.0));
    }
}

#[test]
fn known_query_goes_to_its_cluster() {
    let set = anchors(3, 4, 20, 5);
    let query = set.centroids[2].clone();
    let profile = mean_source_distance(&query, &set).unwrap();
    let t = select_threshold(&set, 100.0).unwrap().threshold;
    let r = assign_profile(profile, &set, t * 2.0);
    assert_eq!(r.verdict.index(), Some(2));
    assert!(r.margin < 0.0);
}

#[test]
fn point_cloud_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = cloud(9, 17);
    let xyz = dir.path().join("c.xyz");
    write_point_cloud(&c, &xyz, Format::Auto).unwrap();
    assert_eq!(read_point_cloud(&xyz, Format::Auto).unwrap().points(), c.points());
    let pcda = dir.path().join("c.pcda");
    write_point_cloud(&c, &pcda, Format::Auto).unwrap();
    let back = read_point_cloud(&pcda, Format::Auto).unwrap();
    for (p, q) in back.points().iter().zip(c.points()) {
        assert!((p.x - q.x).abs() < 1e-6 && (p.y - q.y).abs() < 1e-6 && (p.z - q.z).abs() < 1e-6);
    }
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let arch = Architecture { encoder: vec![3, 4, 5], classifier: Some(vec![5, 3]), projection: None };
    let model = init_model(&arch, 1).unwrap();
    let path = dir.path().join("m.fpcd");
    save_checkpoint(&model, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap().tensors(), model.tensors());
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Load(_))));
    std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Load(_))));
}
