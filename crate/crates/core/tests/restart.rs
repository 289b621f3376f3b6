use std::time::{Duration, Instant};

use serde_json::json;
use shareal_core::catalog::{AnalyticMeta, DatasetMeta, DatasetPatch};
use shareal_core::clock::now_ms;
use shareal_core::{JobSpec, JobState, Platform, Role, SeriesQuery, ServiceConfig, TelemetryPoint};

fn config(dir: &std::path::Path) -> ServiceConfig {
    ServiceConfig {
        data_dir: dir.to_path_buf(),
        admin_name: "root".into(),
        admin_secret: Some("pw".into()),
        ..Default::default()
    }
}

#[test]
fn state_survives_an_abandoned_process() {
    let dir = tempfile::tempdir().unwrap();
    let (datasets, job, room) = {
        let p = Platform::open(config(dir.path())).unwrap();
        let admin = p.catalog.authenticate("root", "pw").unwrap();
        let admin = p.catalog.authorize(&admin.token).unwrap();
        let ana = p.catalog.register_user(&admin, "ana", Role::Analyst, "pw").unwrap().principal();

        let datasets: Vec<_> = (0..3)
            .map(|i| {
                let meta = DatasetMeta { name: format!("d{i}"), ..Default::default() };
                p.catalog.create_dataset(&ana, meta, format!("row {i}\n").as_bytes()).unwrap()
            })
            .collect();
        let patch = DatasetPatch { description: Some("second version".into()), ..Default::default() };
        p.catalog.update_dataset(&ana, datasets[0].id, patch).unwrap();

        let points: Vec<TelemetryPoint> = (0..50)
            .map(|i| TelemetryPoint { source: "m".into(), channel: "w".into(), ts: i * 1_000, value: i as f64 / 3.0 })
            .collect();
        p.series.ingest_batch(points).unwrap();

        let room = p.chat.create_room(&ana, "ops").unwrap();
        for i in 0..5 {
            p.chat.post(&ana, room.id, &format!("note {i}")).unwrap();
        }

        let meta = AnalyticMeta { name: "sleeper".into(), runtime_id: "bash".into(), ..Default::default() };
        let sleeper = p.catalog.create_analytic(&ana, meta, &b"sleep 30\n"[..]).unwrap();
        let job = p.executor.submit(&ana, JobSpec::new(sleeper.id, datasets[1].id, json!({}))).unwrap();
        let deadline = Instant::now() + Duration::from_secs(10);
        while p.executor.job_unchecked(job.id).unwrap().state != JobState::Running {
            assert!(Instant::now() < deadline, "job never started");
            p.maintain(now_ms()).unwrap();
            std::thread::sleep(Duration::from_millis(5));
        }
        (datasets, job.id, room.id)
        // dropped without shutdown: the job stays RUNNING in the store
    };

    let p = Platform::open(config(dir.path())).unwrap();
    for d in &datasets {
        let again = p.catalog.dataset_unchecked(d.id).unwrap();
        assert_eq!((again.name.as_str(), again.checksum.as_str()), (d.name.as_str(), d.checksum.as_str()));
    }
    assert_eq!(p.catalog.dataset_unchecked(datasets[0].id).unwrap().version, 2);
    assert!(p.catalog.integrity_violations().unwrap().is_empty());

    let job = p.executor.job_unchecked(job).unwrap();
    assert_eq!(job.state, JobState::Failed);
    assert_eq!(job.reason.as_deref(), Some("interrupted"));

    let series = p.series.query_range(&SeriesQuery::raw("m", &["w"], 0, 50_000)).unwrap();
    assert_eq!(series[0].points.len(), 50);
    assert_eq!(series[0].points[7], (7_000, 7.0 / 3.0));

    let seqs: Vec<u64> = p.chat.fetch(room, 0, 100).unwrap().iter().map(|m| m.seq).collect();
    assert_eq!(seqs, vec![1, 2, 3, 4, 5]);
}
