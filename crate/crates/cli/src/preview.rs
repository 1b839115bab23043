use std::fmt::Write as _;

use bimangen::dataset::{EpisodeRecord, Manifest};
use bimangen::raster::RgbImage;
use bimangen::trajectory::episode::{frame_file, read_actions, read_header};
use bimangen::viewcomposer::resize_bilinear;

use crate::{failed, CliError};

const THUMB: usize = 128;
const GAP: usize = 4;

/// One row per camera with every `every`-th frame, plus a text summary.
pub fn contact_sheet(m: &Manifest, rec: &EpisodeRecord, every: usize) -> Result<(RgbImage, String), CliError> {
    let dir = m.episode_dir(rec);
    let header = read_header(&dir).map_err(failed)?;
    let ts: Vec<usize> = (1..=header.len).step_by(every).collect();
    let cols = ts.len().max(1);
    let rows = header.cameras.len().max(1);
    let mut sheet = RgbImage::filled(cols * (THUMB + GAP) + GAP, rows * (THUMB + GAP) + GAP, [24, 24, 24]);
    for (r, cam) in header.cameras.iter().enumerate() {
        for (c, &t) in ts.iter().enumerate() {
            let img = RgbImage::load_png(dir.join("frames").join(cam).join(frame_file(t))).map_err(failed)?;
            let th = resize_bilinear(&img, THUMB, THUMB);
            sheet.blit(&th, GAP + c * (THUMB + GAP), GAP + r * (THUMB + GAP));
        }
    }

    let actions = read_actions(&dir).map_err(failed)?;
    let mut stats = String::new();
    let _ = writeln!(stats, "episode {} ({}), source {}", rec.id, rec.recipe, rec.source_id);
    let _ = writeln!(stats, "T = {}, cameras {:?}, model {}", rec.len, header.cameras, rec.model);
    let _ = writeln!(stats, "instruction: {}", rec.instruction);
    for (name, pick) in [("left", 0usize), ("right", 1)] {
        let g: Vec<f64> = actions.iter().map(|a| if pick == 0 { a.left_gripper } else { a.right_gripper }).collect();
        let lo = g.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(stats, "{name} gripper range [{lo:.3}, {hi:.3}]");
    }
    let _ = writeln!(stats, "digest {}", rec.digest);
    Ok((sheet, stats))
}
