//! Line-delimited JSON pose tracks.
//!
//! Line 1 is a header `{"video_id", "num_frames", "total_count"}`; every
//! following line is one frame `{"frame_index", "points": [[x, y, conf, detected], ...]}`.
//! Floats are written in shortest round-trip form, so reading back is exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{KeypointFrame, PoseError, VideoPoseTrack};

#[derive(Serialize, Deserialize)]
struct Header {
    video_id: String,
    num_frames: usize,
    total_count: usize,
}

pub fn write_pose_track<W: Write>(track: &VideoPoseTrack, mut out: W) -> Result<(), PoseError> {
    let header = Header {
        video_id: track.video_id.clone(),
        num_frames: track.frames.len(),
        total_count: track.frames.first().map_or(0, |f| f.points.len()),
    };
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for frame in &track.frames {
        serde_json::to_writer(&mut out, frame).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_pose_track<R: Read>(input: R) -> Result<VideoPoseTrack, PoseError> {
    let mut lines = BufReader::new(input).lines();
    let header_line = lines.next().transpose()?.ok_or(PoseError::Parse {
        line: 1,
        frame_index: 0,
        message: "missing header".into(),
    })?;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| PoseError::Parse {
        line: 1,
        frame_index: 0,
        message: format!("bad header: {e}"),
    })?;
    let mut frames = Vec::with_capacity(header.num_frames);
    for (n, line) in lines.enumerate() {
        let line = line?;
        let expected = frames.len();
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| PoseError::Parse {
            line: n + 2,
            frame_index: expected,
            message,
        };
        let frame: KeypointFrame = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if frame.frame_index != expected {
            return Err(parse_err(format!(
                "record has frame_index {}, expected {expected}",
                frame.frame_index
            )));
        }
        if frame.points.len() != header.total_count {
            return Err(parse_err(format!(
                "{} keypoints, header declares {}",
                frame.points.len(),
                header.total_count
            )));
        }
        frames.push(frame);
    }
    if frames.len() != header.num_frames {
        return Err(PoseError::Parse {
            line: frames.len() + 2,
            frame_index: frames.len(),
            message: format!(
                "truncated track: header declares {} frames, found {}",
                header.num_frames,
                frames.len()
            ),
        });
    }
    Ok(VideoPoseTrack {
        video_id: header.video_id,
        frames,
    })
}

pub fn save_pose_track(track: &VideoPoseTrack, path: &Path) -> Result<(), PoseError> {
    write_pose_track(track, BufWriter::new(File::create(path)?))
}

pub fn load_pose_track(path: &Path) -> Result<VideoPoseTrack, PoseError> {
    read_pose_track(File::open(path)?)
}
