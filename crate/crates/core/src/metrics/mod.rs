pub mod image;
pub mod report;
pub mod seg;

pub use image::{mae, mse, psnr, psnr_from_mse, rescale_image, rescale_to_255, ssim, ImageQuality};
pub use report::{
    aggregate_image, aggregate_seg, mean_sd, seg_reports_csv, ImageQualityReport, ImageQualityTable, MeanSd,
    SegMetric, SegSummary,
};
pub use seg::{dsc, hd95, region_metrics, sensitivity, specificity, RegionMetrics, SegMetricReport};
