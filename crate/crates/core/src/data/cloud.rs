use super::DataError;

/// N points × C channels (x, y, z first) with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<f32>,
    channels: usize,
    pub class_label: Option<u16>,
    /// Per-point labels: part ids for part segmentation, semantic classes for scenes.
    pub part_labels: Option<Vec<u16>>,
    pub category: Option<u16>,
}

impl PointCloud {
    /// Validating constructor: at least one point, at least 3 channels, finite
    /// coordinates, and per-point labels (if any) one per point.
    pub fn new(points: Vec<f32>, channels: usize) -> Result<Self, DataError> {
        let cloud = PointCloud {
            points,
            channels,
            class_label: None,
            part_labels: None,
            category: None,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn with_class(mut self, label: u16) -> Self {
        self.class_label = Some(label);
        self
    }

    pub fn with_category(mut self, category: u16) -> Self {
        self.category = Some(category);
        self
    }

    pub fn with_part_labels(mut self, labels: Vec<u16>) -> Result<Self, DataError> {
        self.part_labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.channels < 3 {
            return Err(DataError::Invalid(format!(
                "need at least 3 channels, got {}",
                self.channels
            )));
        }
        if self.points.is_empty() || self.points.len() % self.channels != 0 {
            return Err(DataError::Invalid(format!(
                "{} values do not form a non-empty {}-channel point array",
                self.points.len(),
                self.channels
            )));
        }
        if self.points.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("non-finite point attribute".into()));
        }
        if let Some(labels) = &self.part_labels {
            if labels.len() != self.len() {
                return Err(DataError::Invalid(format!(
                    "{} per-point labels for {} points",
                    labels.len(),
                    self.len()
                )));
            }
        }
        Ok(())
    }

    /// Number of points N.
    pub fn len(&self) -> usize {
        self.points.len() / self.channels
    }

    /// Always false for a validated cloud.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn points(&self) -> &[f32] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f32] {
        &self.points[i * self.channels..(i + 1) * self.channels]
    }

    /// Interleaved xyz of every point.
    pub fn xyz(&self) -> Vec<f32> {
        self.points
            .chunks_exact(self.channels)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect()
    }

    /// New cloud made of the given rows, labels carried along.
    pub fn select(&self, rows: &[usize]) -> PointCloud {
        let mut points = Vec::with_capacity(rows.len() * self.channels);
        for &r in rows {
            points.extend_from_slice(self.point(r));
        }
        PointCloud {
            points,
            channels: self.channels,
            class_label: self.class_label,
            part_labels: self
                .part_labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r]).collect()),
            category: self.category,
        }
    }
}
