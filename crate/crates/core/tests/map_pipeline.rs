use oamap::beam_channel::{Position, ReferenceFrame, SystemConfig};
use oamap::constellation::{med, ConstellationFile, DesignOptions};
use oamap::mapgen::{build_map, design_grid, load_map, save_map, ConstellationMap, Grid, MapError};

fn small_map() -> (ConstellationMap, Vec<oamap::mapgen::GridDesign>) {
    let cfg = SystemConfig::new(vec![60e9, 61e9], vec![0, 1], 4.0, 8).unwrap();
    let grid = Grid::new((0.4, 2.0, 0.4), (1.0, 3.0, 1.0), ReferenceFrame::new(0, 1).unwrap()).unwrap();
    let opts = DesignOptions::default().with_restarts(3);
    let designs = design_grid(&cfg, &grid, &opts).unwrap();
    let map = build_map(&cfg, &grid, &designs, 0.15, 10, 7, "symbols = 8\n").unwrap();
    (map, designs)
}

#[test]
fn every_position_is_assigned_or_quarantined() {
    let (map, designs) = small_map();
    assert_eq!(map.assignments.len() + map.quarantined.len(), designs.len());
    let members: usize = map.categories.iter().map(|c| c.members).sum();
    assert_eq!(members, map.assignments.len());
    for a in &map.assignments {
        assert!(a.category < map.categories.len());
        assert!(a.distortion <= 0.15 + 1e-12);
    }
}

#[test]
fn stored_distortions_match_recomputation() {
    let (map, designs) = small_map();
    let recomputed = map.recompute_distortions(&designs).unwrap();
    for (a, d) in map.assignments.iter().zip(&recomputed) {
        assert!((a.distortion - d).abs() < 1e-9, "{} vs {d}", a.distortion);
    }
}

#[test]
fn representative_keeps_its_own_optimum() {
    let (map, designs) = small_map();
    for c in &map.categories {
        let d = &designs[c.representative];
        let own = med(&d.channel, &c.constellation).unwrap().distance;
        assert!((own - c.d_min).abs() <= 1e-9 * c.d_min);
    }
}

#[test]
fn map_file_round_trip_and_tamper_detection() {
    let (map, _) = small_map();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.txt");
    save_map(&map, &path).unwrap();
    assert_eq!(load_map(&path).unwrap(), map);

    let text = std::fs::read_to_string(&path).unwrap();
    let tampered = text.replacen("symbols = 8", "symbols = 16", 1);
    assert!(matches!(ConstellationMap::from_text(&tampered), Err(MapError::Hash { .. })));
    let future = text.replacen("oamap-map 1", "oamap-map 9", 1);
    assert!(matches!(ConstellationMap::from_text(&future), Err(MapError::Version { found: 9, .. })));
    let truncated = &text[..text.len() / 2];
    assert!(matches!(ConstellationMap::from_text(truncated), Err(MapError::Malformed(_))));
    assert!(matches!(load_map(&dir.path().join("missing.txt")), Err(MapError::Io { .. })));
}

#[test]
fn constellation_file_round_trip() {
    let (map, _) = small_map();
    let c = &map.categories[0];
    let file = ConstellationFile {
        carriers_hz: map.carriers_hz.clone(),
        modes: map.modes.clone(),
        position: Some(Position::Beta { beta: c.beta, z: c.z }),
        d_min: c.d_min,
        constellation: c.constellation.clone(),
    };
    let again = ConstellationFile::from_text(&file.to_text()).unwrap();
    assert_eq!(again, file);
    assert!(ConstellationFile::from_text(&format!("{}extra\n", file.to_text())).is_err());
}
