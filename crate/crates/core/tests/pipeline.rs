use std::collections::BTreeSet;

use vpf_core::model::{prepare_samples, ModelConfig};
use vpf_core::segment::{dataset_stats, read_segments, segment_corpus, write_segments, SegmentFilterConfig, Split};
use vpf_core::synth::{corpus_specs, gen_dataset, read_manifest, CorpusTemplate, MANIFEST_FILE, SCENES_FILE};
use vpf_core::types::read_scenes;

#[test]
fn synth_segment_prepare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let specs = corpus_specs(11, 12, &CorpusTemplate::default());
    let manifest = gen_dataset(&specs, dir.path()).unwrap();
    assert_eq!(read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap(), manifest);
    let scenes = read_scenes(&dir.path().join(SCENES_FILE)).unwrap();
    assert_eq!(scenes.len(), 12);

    let cfg = SegmentFilterConfig::default();
    let records = segment_corpus(&scenes, &cfg).unwrap();
    // Every generated scene keeps its pedestrians within reach of a vehicle.
    let covered: BTreeSet<&str> = records.iter().map(|r| r.scene_id.as_str()).collect();
    assert_eq!(covered.len(), scenes.len());
    for r in &records {
        let entry = manifest.scenes.iter().find(|m| m.scene_id == r.scene_id).unwrap();
        assert!(r.category.0 <= entry.n_pedestrians);
        assert!(r.category.1 <= entry.n_vehicles.min(4));
        assert_eq!(r.frame_end - r.frame_start, cfg.window_frames);
        assert!(r.r <= cfg.max_pairwise_distance_m);
    }
    // Windows of one scene share a split.
    for id in &covered {
        let splits: BTreeSet<Split> = records.iter().filter(|r| r.scene_id == *id).map(|r| r.split).collect();
        assert!(splits.len() <= 2);
    }

    let path = dir.path().join("segments.jsonl");
    write_segments(&path, &records).unwrap();
    assert_eq!(read_segments(&path).unwrap(), records);
    let stats = dataset_stats(&records, &cfg);
    assert_eq!(stats.total(), records.len());

    let samples = prepare_samples(&ModelConfig::default(), &scenes, &records).unwrap();
    assert_eq!(samples.len(), records.len());
    for (s, r) in samples.iter().zip(&records) {
        assert_eq!(s.key, format!("{}@{}", r.scene_id, r.frame_start));
        assert_eq!(s.n_veh(), r.category.1);
        assert!(s.target.is_some());
    }
}

#[test]
fn segmenting_twice_is_identical() {
    let specs = corpus_specs(3, 6, &CorpusTemplate::default());
    let dir = tempfile::tempdir().unwrap();
    gen_dataset(&specs, dir.path()).unwrap();
    let scenes = read_scenes(&dir.path().join(SCENES_FILE)).unwrap();
    let cfg = SegmentFilterConfig::default();
    assert_eq!(segment_corpus(&scenes, &cfg).unwrap(), segment_corpus(&scenes, &cfg).unwrap());
}
