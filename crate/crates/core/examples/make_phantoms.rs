//! Writes a small set of analytic vessel phantoms as twin files, handy as
//! donors for `arteria synth` and for trying the pipeline end to end.
//!
//! Usage: `cargo run --example make_phantoms -- <out_dir> [n] [k]`

use std::path::PathBuf;

use arteria::geometry::phantom;
use arteria::io::save_twin;

fn main() -> arteria::Result<()> {
    let mut args = std::env::args().skip(1);
    let out_dir = PathBuf::from(args.next().unwrap_or_else(|| "phantoms".into()));
    let n: usize = args.next().map(|v| v.parse().unwrap()).unwrap_or(200);
    let k: usize = args.next().map(|v| v.parse().unwrap()).unwrap_or(32);
    std::fs::create_dir_all(&out_dir)?;

    let twins = [
        phantom::straight_tube(n, 6.0, 0.20, k)?,
        phantom::tapered_tube(n, 7.0, 0.25, 0.14, k)?,
        phantom::stenotic_tube(n, 5.5, 0.22, 0.45, 0.40, 0.06, k)?,
        phantom::stenotic_tube(n, 6.5, 0.19, 0.60, 0.60, 0.05, k)?,
        phantom::helical_tube(n, 7.5, 0.8, 1.5, 0.18, k)?,
        phantom::helical_tube(n, 6.0, 0.5, 2.2, 0.21, k)?,
    ];
    for (i, mut twin) in twins.into_iter().enumerate() {
        twin.meta.id = format!("{}-{i}", twin.meta.id);
        let path = out_dir.join(format!("{}.json", twin.meta.id));
        save_twin(&twin, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
