use nalgebra::Vector3;

use super::object::SurfaceCloud;
use crate::error::{Error, Result};

/// Points whose outward normal faces the camera: `n · view_dir > threshold`.
/// A threshold of -1 or below keeps every point.
pub fn partial_view(cloud: &SurfaceCloud, view_dir: &Vector3<f64>, threshold: f64) -> Result<SurfaceCloud> {
    if cloud.points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let d = view_dir.try_normalize(1e-12).ok_or_else(|| Error::InvalidArgument("zero view direction".into()))?;
    let keep_all = threshold <= -1.0;
    let (points, normals): (Vec<_>, Vec<_>) = cloud
        .points
        .iter()
        .zip(&cloud.normals)
        .filter(|(_, n)| keep_all || Vector3::from(**n).dot(&d) > threshold)
        .map(|(p, n)| (*p, *n))
        .unzip();
    if points.is_empty() {
        return Err(Error::FullyOccluded);
    }
    Ok(SurfaceCloud { points, normals })
}
