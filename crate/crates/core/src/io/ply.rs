use std::fmt::Write as _;
use std::path::Path;

use super::write_atomic;
use crate::error::Result;
use crate::geometry::OrganizedCloud;

/// ASCII PLY with one `double x y z` vertex per valid point, row-major.
pub fn render_ply(cloud: &OrganizedCloud) -> String {
    let n = cloud.points().iter().flatten().count();
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {n}\nproperty double x\nproperty double y\nproperty double z\nend_header\n"
    );
    for p in cloud.points().iter().flatten() {
        let _ = writeln!(out, "{} {} {}", super::fmt_f64(p.x), super::fmt_f64(p.y), super::fmt_f64(p.z));
    }
    out
}

pub fn write_ply(path: &Path, cloud: &OrganizedCloud) -> Result<()> {
    write_atomic(path, render_ply(cloud).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    #[test]
    fn header_and_vertices() {
        let cloud = OrganizedCloud::new(2, 1, vec![Some(Vec3::new(0.1, -0.2, 1.5)), None]).unwrap();
        let s = render_ply(&cloud);
        assert!(s.starts_with("ply\nformat ascii 1.0\nelement vertex 1\n"));
        let last: Vec<f64> = s.lines().last().unwrap().split(' ').map(|w| w.parse().unwrap()).collect();
        assert_eq!(last, vec![0.1, -0.2, 1.5]);
    }
}
