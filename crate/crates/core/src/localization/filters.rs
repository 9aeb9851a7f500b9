use super::{FrameStatus, LocalizedFrame, LocalizationError};
use crate::geom::{MeshError, TriMesh};

/// Rejects accepted frames whose camera center lies outside the mesh.
/// Requires a watertight mesh; boundary points count as inside.
pub fn spatial_filter(frames: &mut [LocalizedFrame], mesh: &TriMesh) -> Result<(), MeshError> {
    for frame in frames.iter_mut() {
        if frame.status != FrameStatus::Accepted {
            continue;
        }
        let center = frame
            .camera_center()
            .expect("accepted frames carry a pose");
        if !mesh.point_inside(&center)? {
            frame.status = FrameStatus::RejectedSpatial;
        }
    }
    Ok(())
}

/// Velocity-bound consistency pass: a frame is kept only if its camera
/// center lies within `v_max * (t - t_anchor)` of the last kept frame. The
/// first accepted frame always anchors; rejected frames do not advance the
/// anchor.
pub fn temporal_filter(
    frames: &mut [LocalizedFrame],
    v_max_mm_per_s: f64,
) -> Result<(), LocalizationError> {
    for pair in frames.windows(2) {
        if pair[1].timestamp_s <= pair[0].timestamp_s {
            return Err(LocalizationError::NonMonotonicTimestamps {
                frame_id: pair[1].frame_id,
            });
        }
    }
    let mut anchor: Option<(nalgebra::Point3<f64>, f64)> = None;
    for frame in frames.iter_mut() {
        if frame.status != FrameStatus::Accepted {
            continue;
        }
        let center = frame
            .camera_center()
            .expect("accepted frames carry a pose");
        match anchor {
            None => anchor = Some((center, frame.timestamp_s)),
            Some((anchor_pos, anchor_t)) => {
                let allowed = v_max_mm_per_s * (frame.timestamp_s - anchor_t);
                if (center - anchor_pos).norm() <= allowed {
                    anchor = Some((center, frame.timestamp_s));
                } else {
                    frame.status = FrameStatus::RejectedTemporal;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Point3, Vector3};

    use crate::geom::RigidTransform;

    fn frame_at(frame_id: u64, t: f64, center: Point3<f64>) -> LocalizedFrame {
        // Identity rotation: camera-from-world translation is -center.
        LocalizedFrame {
            frame_id,
            timestamp_s: t,
            pose: Some(RigidTransform::from_translation(-center.coords)),
            inlier_count: 50,
            inlier_ratio: 0.9,
            status: FrameStatus::Accepted,
        }
    }

    fn cube(side: f64) -> TriMesh {
        let h = side / 2.0;
        TriMesh::new(
            vec![
                Point3::new(-h, -h, -h),
                Point3::new(h, -h, -h),
                Point3::new(h, h, -h),
                Point3::new(-h, h, -h),
                Point3::new(-h, -h, h),
                Point3::new(h, -h, h),
                Point3::new(h, h, h),
                Point3::new(-h, h, h),
            ],
            vec![
                [0, 2, 1],
                [0, 3, 2],
                [4, 5, 6],
                [4, 6, 7],
                [0, 1, 5],
                [0, 5, 4],
                [2, 3, 7],
                [2, 7, 6],
                [1, 2, 6],
                [1, 6, 5],
                [3, 0, 4],
                [3, 4, 7],
            ],
        )
        .unwrap()
    }

    #[test]
    fn spatial_filter_rejects_outside_poses() {
        let mesh = cube(20.0);
        let mut frames = vec![
            frame_at(0, 0.0, Point3::origin()),
            frame_at(1, 0.1, Point3::new(100.0, 0.0, 0.0)),
            // Epsilon-inside the wall stays accepted (boundary rule).
            frame_at(2, 0.2, Point3::new(10.0 - 1e-5, 0.0, 0.0)),
        ];
        spatial_filter(&mut frames, &mesh).unwrap();
        assert_eq!(frames[0].status, FrameStatus::Accepted);
        assert_eq!(frames[1].status, FrameStatus::RejectedSpatial);
        assert_eq!(frames[2].status, FrameStatus::Accepted);
    }

    #[test]
    fn spatial_filter_needs_watertight_mesh() {
        let open = TriMesh::new(
            vec![
                Point3::new(-1.0, -1.0, 0.0),
                Point3::new(1.0, -1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let mut frames = vec![frame_at(0, 0.0, Point3::origin())];
        assert!(matches!(
            spatial_filter(&mut frames, &open),
            Err(MeshError::WatertightnessRequired)
        ));
    }

    #[test]
    fn velocity_bound_arithmetic() {
        // dt = 0.1 s at v_max = 135 mm/s allows 13.5 mm.
        let mut frames = vec![
            frame_at(0, 0.0, Point3::origin()),
            frame_at(1, 0.1, Point3::new(20.0, 0.0, 0.0)), // 20 > 13.5: rejected
        ];
        temporal_filter(&mut frames, 135.0).unwrap();
        assert_eq!(frames[1].status, FrameStatus::RejectedTemporal);

        let mut frames = vec![
            frame_at(0, 0.0, Point3::origin()),
            frame_at(1, 0.1, Point3::new(10.0, 0.0, 0.0)), // 10 <= 13.5: kept
        ];
        temporal_filter(&mut frames, 135.0).unwrap();
        assert_eq!(frames[1].status, FrameStatus::Accepted);
    }

    #[test]
    fn teleport_rejected_following_frame_kept() {
        let mut frames = vec![
            frame_at(0, 0.0, Point3::origin()),
            frame_at(1, 0.1, Point3::new(50.0, 0.0, 0.0)), // teleport
            frame_at(2, 0.2, Point3::new(1.0, 0.0, 0.0)),  // near the anchor
        ];
        temporal_filter(&mut frames, 135.0).unwrap();
        assert_eq!(frames[1].status, FrameStatus::RejectedTemporal);
        // The anchor did not advance to the teleport, so frame 2 is judged
        // against frame 0 with dt = 0.2 s (27 mm allowed).
        assert_eq!(frames[2].status, FrameStatus::Accepted);
    }

    #[test]
    fn first_accepted_frame_is_always_kept() {
        let mut frames = vec![
            LocalizedFrame {
                frame_id: 0,
                timestamp_s: 0.0,
                pose: None,
                inlier_count: 0,
                inlier_ratio: 0.0,
                status: FrameStatus::Unlocalized,
            },
            frame_at(1, 0.1, Point3::new(500.0, 0.0, 0.0)),
        ];
        temporal_filter(&mut frames, 135.0).unwrap();
        assert_eq!(frames[0].status, FrameStatus::Unlocalized);
        assert_eq!(frames[1].status, FrameStatus::Accepted);
    }

    #[test]
    fn non_monotonic_timestamps_error() {
        let mut frames = vec![
            frame_at(0, 0.5, Point3::origin()),
            frame_at(1, 0.5, Point3::origin()),
        ];
        assert!(matches!(
            temporal_filter(&mut frames, 135.0),
            Err(LocalizationError::NonMonotonicTimestamps { frame_id: 1 })
        ));
    }

    #[test]
    fn consecutive_kept_frames_respect_bound() {
        let mut frames: Vec<LocalizedFrame> = (0..30)
            .map(|i| {
                frame_at(
                    i,
                    i as f64 / 30.0,
                    Point3::new(i as f64 * 0.8, 0.0, 0.0),
                )
            })
            .collect();
        frames[10].pose = Some(RigidTransform::from_translation(-Vector3::new(300.0, 0.0, 0.0)));
        temporal_filter(&mut frames, 135.0).unwrap();
        let mut last: Option<(Point3<f64>, f64)> = None;
        for f in &frames {
            if f.status == FrameStatus::Accepted {
                let c = f.camera_center().unwrap();
                if let Some((lp, lt)) = last {
                    assert!((c - lp).norm() <= 135.0 * (f.timestamp_s - lt) + 1e-9);
                }
                last = Some((c, f.timestamp_s));
            }
        }
        assert_eq!(frames[10].status, FrameStatus::RejectedTemporal);
    }
}
