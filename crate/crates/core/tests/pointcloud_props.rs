use proptest::prelude::*;
use rbfctl_core::pointcloud::{make_channel_cloud, make_unit_square_grid, NodeKind, PointCloud, Segment};

fn shuffled(cloud: &PointCloud, keys: &[u64]) -> PointCloud {
    let mut perm: Vec<usize> = (0..cloud.len()).collect();
    perm.sort_by_key(|&i| keys[i % keys.len()].wrapping_mul(i as u64 + 1));
    cloud.permuted(&perm)
}

fn top_kind() -> impl Strategy<Value = NodeKind> {
    prop_oneof![Just(NodeKind::Dirichlet), Just(NodeKind::Neumann), Just(NodeKind::Robin)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reorder_is_idempotent_and_conserves_counts(
        nx in 2usize..12, ny in 2usize..12, kind in top_kind(), keys in prop::collection::vec(any::<u64>(), 1..64)
    ) {
        let c = shuffled(&make_unit_square_grid(nx, ny, kind).unwrap(), &keys);
        let (once, perm) = c.reorder_canonical();
        let (twice, _) = once.reorder_canonical();
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.is_canonical());
        prop_assert_eq!(once.counts(), c.counts());
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(once.coords[k], c.coords[i]);
        }
    }

    #[test]
    fn grid_invariants(nx in 2usize..15, ny in 2usize..15) {
        let c = make_unit_square_grid(nx, ny, NodeKind::Dirichlet).unwrap();
        prop_assert_eq!(c.len(), nx * ny);
        prop_assert_eq!(c.n_internal(), (nx - 2) * (ny - 2));
        prop_assert!(c.is_canonical());
        // All-Dirichlet boundary: the internal block is a prefix.
        prop_assert!(c.tags[..c.n_internal()].iter().all(|t| t.kind == NodeKind::Internal));
        for (t, n) in c.tags.iter().zip(&c.normals) {
            if t.is_boundary() {
                prop_assert!(n[0] == 0.0 || n[1] == 0.0);
                prop_assert_eq!(n[0].abs() + n[1].abs(), 1.0);
            }
        }
        prop_assert_eq!(c.segment_nodes(Segment::Top).len(), nx);
    }

    #[test]
    fn node_file_round_trip_is_exact(nx in 2usize..10, ny in 2usize..10, kind in top_kind(), keys in prop::collection::vec(any::<u64>(), 1..16)) {
        let c = shuffled(&make_unit_square_grid(nx, ny, kind).unwrap(), &keys);
        let mut buf = Vec::new();
        c.write_nodes(&mut buf).unwrap();
        let back = PointCloud::read_nodes(buf.as_slice()).unwrap();
        prop_assert_eq!(back, c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn channel_cloud_invariants(target in 120usize..600, seed in 0u64..1000) {
        let c = make_channel_cloud(1.5, 1.0, target, seed).unwrap();
        prop_assert!(c.is_canonical());
        prop_assert!(c.find_coincident().is_none());
        let boundary: usize = [Segment::Inlet, Segment::Outlet, Segment::Wall, Segment::Blowing, Segment::Suction]
            .iter()
            .map(|&s| c.segment_nodes(s).len())
            .sum();
        prop_assert_eq!(boundary, c.len() - c.n_internal());
        for &i in &c.segment_nodes(Segment::Inlet) {
            prop_assert_eq!(c.normals[i], [-1.0, 0.0]);
        }
        let (lo, hi) = c.bounding_box();
        prop_assert_eq!(lo, [0.0, 0.0]);
        prop_assert_eq!(hi, [1.5, 1.0]);
        prop_assert_eq!(make_channel_cloud(1.5, 1.0, target, seed).unwrap(), c);
    }
}

#[test]
fn node_file_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("channel.nodes");
    let c = make_channel_cloud(1.5, 1.0, 400, 7).unwrap();
    c.save_nodes(&path).unwrap();
    assert_eq!(PointCloud::load_nodes(&path).unwrap(), c);
}

#[test]
fn misspelled_tag_and_empty_file_are_rejected() {
    let err = PointCloud::read_nodes("0.5 0.5 internal -\n0 0 Diriclet bottom 0 -1\n".as_bytes()).unwrap_err();
    assert!(err.to_string().contains("Diriclet"), "{err}");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.nodes");
    std::fs::write(&path, "").unwrap();
    assert!(PointCloud::load_nodes(&path).is_err());
}
