//! Attention maps for a sample of test subjects: where the network looks
//! when it predicts spine age. Each subject gets a grayscale image plus the
//! raw map values as CSV.

use anyhow::{anyhow, bail, Result};
use spineage_core::imgio::write_pgm;
use spineage_core::model::gradcam::attention_map;
use spineage_core::Split;

use super::evaluate::load_net;
use super::{load_cohort, net_shape, subject_input, Ctx};

pub fn run(ctx: &Ctx<'_>) -> Result<Vec<String>> {
    let c = ctx.config;
    let l = ctx.layout;
    let cohort = load_cohort(l)?;
    let synth = c.synth.to_synth_config();
    let region = c.region_choice()?.to_region();
    let mut net = load_net(ctx)?;
    let shape = net_shape(&c.model);

    let test: Vec<&spineage_core::Subject> = cohort
        .iter()
        .filter(|r| r.subject.split == Some(Split::Test))
        .map(|r| &r.subject)
        .collect();
    if test.is_empty() {
        bail!("no test subjects to render attention maps for");
    }

    let mut outputs = Vec::new();
    for s in test.iter().take(c.gradcam.subjects) {
        let (input, _dims) = subject_input(&synth, &c.model, region, s)?;
        let map = attention_map(&mut net, &input, shape).map_err(|e| anyhow!("{e}"))?;
        if map.all_zero {
            log::warn!("attention map for {} is all zero", s.id);
        }

        let pgm_path = l.gradcam_pgm(&s.id);
        l.ensure_parent(&pgm_path)?;
        let pixels: Vec<u8> = map
            .values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        write_pgm(&pgm_path, map.width, map.height, &pixels).map_err(|e| anyhow!("{e}"))?;
        outputs.push(l.rel(&pgm_path));

        let csv_path = l.gradcam_csv(&s.id);
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(["row", "col", "value"])?;
        for row in 0..map.height {
            for col in 0..map.width {
                w.write_record([
                    row.to_string(),
                    col.to_string(),
                    format!("{:.10}", map.values[row * map.width + col]),
                ])?;
            }
        }
        w.flush()?;
        outputs.push(l.rel(&csv_path));
    }
    Ok(outputs)
}
