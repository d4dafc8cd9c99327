//! The built-in sub-commands.

use std::path::PathBuf;

use anyhow::{bail, Context as _};
use annodb::media::{EdgePolicy, DEFAULT_JPEG_QUALITY};
use annodb::{evaluate, filters, formats, info, modify};
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};

use crate::registry::Registry;
use crate::Context;

/// Registry holding every built-in sub-command.
pub fn builtin() -> Registry {
    let mut r = Registry::new();
    let table: &[(&str, &str, fn(Command) -> Command, crate::Handler)] = &[
        ("addDatabase", "merge another database into the open one", add_database_args, add_database),
        ("clampBoxesToImage", "clip boxes to their image bounds", no_args, clamp_boxes),
        ("cropObjects", "crop every object into its own image", crop_objects_args, crop_objects),
        ("evaluateDetection", "score detections against a ground-truth database", evaluate_detection_args, evaluate_detection),
        ("evaluateSegmentation", "score segmentation masks against a ground-truth database", evaluate_segmentation_args, evaluate_segmentation),
        ("expandBoxes", "expand bounding boxes from each side", expand_boxes_args, expand_boxes),
        ("exportCsv", "write one CSV row per object", export_csv_args, export_csv),
        ("exportKitti", "write KITTI label files, one per image", export_kitti_args, export_kitti),
        ("filterEmptyImages", "delete images without objects", no_args, filter_empty_images),
        ("filterImagesSQL", "delete images matching an SQL condition", filter_images_sql_args, filter_images_sql),
        ("filterObjectsAtBorder", "delete objects touching the image border band", filter_border_args, filter_border),
        ("filterObjectsByIntersection", "delete objects covered by other objects", filter_intersection_args, filter_intersection),
        ("filterObjectsSQL", "delete objects matching an SQL condition", filter_objects_sql_args, filter_objects_sql),
        ("importKitti", "import KITTI object-detection labels", import_kitti_args, import_kitti),
        ("importLabelme", "import LabelMe XML annotations", import_voc_args, import_labelme),
        ("importPascalVoc2012", "import PASCAL VOC XML annotations", import_voc_args, import_pascal_voc),
        ("plotObjectsHistogram", "histogram of the values returned by an SQL query", histogram_args, plot_histogram),
        ("polygonsToBoxes", "set each object's box around its polygons", no_args, polygons_to_boxes),
        ("printInfo", "print a summary of the database", print_info_args, print_info),
        ("serve", "serve the session over HTTP for the inspector", serve_args, serve),
        ("splitDatabase", "split images into several databases", split_args, split_database),
    ];
    for (name, about, args, handler) in table {
        r.register(name, about, *args, *handler).expect("built-in names are unique");
    }
    r.register("importPascalVoc", "same as importPascalVoc2012", import_voc_args, import_pascal_voc)
        .expect("built-in names are unique");
    r.register("filterObjectsSql", "same as filterObjectsSQL", filter_objects_sql_args, filter_objects_sql)
        .expect("built-in names are unique");
    r
}

fn no_args(cmd: Command) -> Command {
    cmd
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_parser(value_parser!(PathBuf))
        .help(help)
}

fn path(m: &ArgMatches, name: &str) -> PathBuf {
    m.get_one::<PathBuf>(name).cloned().expect("required argument")
}

fn opt_path(m: &ArgMatches, name: &str) -> Option<PathBuf> {
    m.get_one::<PathBuf>(name).cloned()
}

fn real(m: &ArgMatches, name: &str) -> f64 {
    *m.get_one::<f64>(name).expect("argument with default")
}

fn print_info_args(cmd: Command) -> Command {
    cmd.arg(
        Arg::new("images_by_dir")
            .long("images_by_dir")
            .action(ArgAction::SetTrue)
            .help("print image statistics by directory"),
    )
    .arg(
        Arg::new("objects_by_image")
            .long("objects_by_image")
            .action(ArgAction::SetTrue)
            .help("print object counts per image"),
    )
}

fn print_info(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    let summary = info::summarize(&ctx.db, m.get_flag("images_by_dir"), m.get_flag("objects_by_image"))?;
    write!(ctx.out, "{summary}")?;
    Ok(())
}

fn import_kitti_args(cmd: Command) -> Command {
    cmd.arg(path_arg("images_dir", "directory with the images").required(true))
        .arg(path_arg("detection_dir", "directory with one label file per image").required(true))
}

fn import_kitti(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    let report = formats::import_kitti(&ctx.db, &ctx.rootdir, &path(m, "images_dir"), &path(m, "detection_dir"))?;
    log_skipped(&report);
    Ok(())
}

fn import_voc_args(cmd: Command) -> Command {
    cmd.arg(path_arg("images_dir", "directory with the images").required(true))
        .arg(path_arg("annotations_dir", "directory with one XML file per image").required(true))
}

fn import_pascal_voc(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    let report =
        formats::import_pascal_voc(&ctx.db, &ctx.rootdir, &path(m, "images_dir"), &path(m, "annotations_dir"))?;
    log_skipped(&report);
    Ok(())
}

fn import_labelme(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    let report =
        formats::import_labelme(&ctx.db, &ctx.rootdir, &path(m, "images_dir"), &path(m, "annotations_dir"))?;
    log_skipped(&report);
    Ok(())
}

fn log_skipped(report: &formats::ImportReport) {
    for s in &report.skipped {
        log::warn!("skipped {}: {}", s.path.display(), s.reason);
    }
}

fn export_kitti_args(cmd: Command) -> Command {
    cmd.arg(path_arg("detection_dir", "output directory for label files").required(true))
}

fn export_kitti(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    let n = formats::export_kitti(&ctx.db, &path(m, "detection_dir"))?;
    log::info!("wrote {n} label files");
    Ok(())
}

fn export_csv_args(cmd: Command) -> Command {
    cmd.arg(path_arg("out_csv", "output CSV file").required(true))
}

fn export_csv(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    let n = formats::export_csv(&ctx.db, &path(m, "out_csv"))?;
    log::info!("wrote {n} rows");
    Ok(())
}

fn filter_empty_images(ctx: &mut Context, _: &ArgMatches) -> anyhow::Result<()> {
    filters::filter_empty_images(&ctx.db)?;
    Ok(())
}

fn filter_border_args(cmd: Command) -> Command {
    cmd.arg(
        Arg::new("border_thresh_perc")
            .long("border_thresh_perc")
            .value_parser(value_parser!(f64))
            .default_value("0.01")
            .help("border band width as a fraction of the image size"),
    )
}

fn filter_border(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    filters::filter_objects_at_border(&ctx.db, real(m, "border_thresh_perc"))?;
    Ok(())
}

fn filter_intersection_args(cmd: Command) -> Command {
    cmd.arg(
        Arg::new("intersection_thresh_perc")
            .long("intersection_thresh_perc")
            .value_parser(value_parser!(f64))
            .required(true)
            .help("delete objects covered by more than this fraction of their own area"),
    )
}

fn filter_intersection(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    filters::filter_objects_by_intersection(&ctx.db, real(m, "intersection_thresh_perc"))?;
    Ok(())
}

fn filter_objects_sql_args(cmd: Command) -> Command {
    cmd.arg(
        Arg::new("where_object")
            .long("where_object")
            .required(true)
            .help("SQL condition over the objects table, e.g. 'width<64 AND name=\"car\"'"),
    )
}

fn filter_objects_sql(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    filters::filter_objects_sql(&ctx.db, m.get_one::<String>("where_object").unwrap())?;
    Ok(())
}

fn filter_images_sql_args(cmd: Command) -> Command {
    cmd.arg(
        Arg::new("where_image")
            .long("where_image")
            .required(true)
            .help("SQL condition over the images table"),
    )
}

fn filter_images_sql(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    filters::filter_images_sql(&ctx.db, m.get_one::<String>("where_image").unwrap())?;
    Ok(())
}

fn expand_boxes_args(cmd: Command) -> Command {
    cmd.arg(
        Arg::new("expand_perc")
            .long("expand_perc")
            .value_parser(value_parser!(f64))
            .allow_negative_numbers(true)
            .required(true)
            .help("fraction of width/height added on each side"),
    )
}

fn expand_boxes(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    modify::expand_boxes(&ctx.db, real(m, "expand_perc"))?;
    Ok(())
}

fn clamp_boxes(ctx: &mut Context, _: &ArgMatches) -> anyhow::Result<()> {
    modify::clamp_boxes_to_image(&ctx.db)?;
    Ok(())
}

fn polygons_to_boxes(ctx: &mut Context, _: &ArgMatches) -> anyhow::Result<()> {
    let n = modify::polygons_to_boxes(&ctx.db)?;
    log::info!("set boxes of {n} objects");
    Ok(())
}

fn add_database_args(cmd: Command) -> Command {
    cmd.arg(path_arg("db_file", "database to merge in").required(true))
}

fn add_database(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    modify::add_database(&ctx.db, &path(m, "db_file"))?;
    Ok(())
}

fn split_args(cmd: Command) -> Command {
    cmd.arg(
        Arg::new("fractions")
            .long("fractions")
            .num_args(1..)
            .value_parser(value_parser!(f64))
            .required(true)
            .help("fraction of images per output, e.g. 0.7 0.2 0.1"),
    )
    .arg(
        Arg::new("out_names")
            .long("out_names")
            .num_args(1..)
            .value_parser(value_parser!(PathBuf))
            .required(true)
            .help("one output database per fraction"),
    )
    .arg(
        Arg::new("seed")
            .long("seed")
            .value_parser(value_parser!(u64))
            .default_value("0")
            .help("shuffle seed"),
    )
}

fn split_database(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    let fractions: Vec<f64> = m.get_many::<f64>("fractions").unwrap().copied().collect();
    let names: Vec<PathBuf> = m.get_many::<PathBuf>("out_names").unwrap().cloned().collect();
    let seed = *m.get_one::<u64>("seed").unwrap();
    let counts = modify::split_database(&ctx.db, &fractions, &names, seed)?;
    for (name, count) in names.iter().zip(counts) {
        writeln!(ctx.out, "{}: {count}", name.display())?;
    }
    Ok(())
}

fn crop_objects_args(cmd: Command) -> Command {
    cmd.arg(
        Arg::new("edges")
            .long("edges")
            .value_parser(["distort", "constant", "original"])
            .default_value("distort")
            .help("how crops are fitted to the target size"),
    )
    .arg(
        Arg::new("target_width")
            .long("target_width")
            .value_parser(value_parser!(u32).range(1..)),
    )
    .arg(
        Arg::new("target_height")
            .long("target_height")
            .value_parser(value_parser!(u32).range(1..)),
    )
    .arg(path_arg("image_pictures_dir", "directory for the crop images").required(true))
    .arg(
        Arg::new("jpeg_quality")
            .long("jpeg_quality")
            .value_parser(value_parser!(u8).range(1..=100))
            .default_value(DEFAULT_JPEG_QUALITY.to_string()),
    )
}

fn crop_objects(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    let edges: EdgePolicy = m.get_one::<String>("edges").unwrap().parse()?;
    let width = m.get_one::<u32>("target_width").copied();
    let height = m.get_one::<u32>("target_height").copied();
    let (target_width, target_height) = match (edges, width, height) {
        (EdgePolicy::Original, w, h) => (w.unwrap_or(0), h.unwrap_or(0)),
        (_, Some(w), Some(h)) => (w, h),
        _ => bail!("--target_width and --target_height are required unless --edges=original"),
    };
    let opts = modify::CropOptions {
        target_width,
        target_height,
        edges,
        image_pictures_dir: path(m, "image_pictures_dir"),
        jpeg_quality: *m.get_one::<u8>("jpeg_quality").unwrap(),
    };
    let report = modify::crop_objects(&ctx.db, &ctx.rootdir, &opts)?;
    log::info!("wrote {} crops, skipped {}", report.written, report.skipped.len());
    Ok(())
}

fn histogram_args(cmd: Command) -> Command {
    cmd.arg(
        Arg::new("sql")
            .required(true)
            .help("query returning one column, e.g. 'SELECT value FROM properties WHERE key=\"angle\"'"),
    )
    .arg(
        Arg::new("bins")
            .long("bins")
            .value_parser(value_parser!(u64).range(1..))
            .help("number of bins (default: Sturges' rule)"),
    )
    .arg(path_arg("out_svg", "write the chart as SVG"))
    .arg(path_arg("out_csv", "write bin_low, bin_high, count as CSV"))
}

fn plot_histogram(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    let hist = info::plot_objects_histogram(
        &ctx.db,
        m.get_one::<String>("sql").unwrap(),
        m.get_one::<u64>("bins").map(|b| *b as usize),
        opt_path(m, "out_svg").as_deref(),
        opt_path(m, "out_csv").as_deref(),
    )?;
    write!(ctx.out, "{}", info::render_text(&hist))?;
    Ok(())
}

fn evaluate_detection_args(cmd: Command) -> Command {
    cmd.arg(path_arg("gt_db_file", "ground-truth database").required(true))
        .arg(
            Arg::new("iou_thresh")
                .long("iou_thresh")
                .value_parser(value_parser!(f64))
                .default_value("0.5")
                .help("minimum IoU for a true positive"),
        )
        .arg(
            Arg::new("where_object")
                .long("where_object")
                .help("SQL condition selecting objects in both databases"),
        )
        .arg(path_arg("out_csv", "write per-class results as CSV"))
}

fn evaluate_detection(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    let gt = path(m, "gt_db_file");
    let result = evaluate::evaluate_detection(
        &ctx.db,
        &gt,
        real(m, "iou_thresh"),
        m.get_one::<String>("where_object").map(String::as_str),
    )
    .with_context(|| format!("evaluating against {}", gt.display()))?;
    write!(ctx.out, "{result}")?;
    if let Some(csv) = opt_path(m, "out_csv") {
        result.write_csv(&csv)?;
    }
    Ok(())
}

fn evaluate_segmentation_args(cmd: Command) -> Command {
    cmd.arg(path_arg("gt_db_file", "ground-truth database").required(true))
        .arg(
            Arg::new("class_ids")
                .long("class_ids")
                .num_args(1..)
                .value_parser(value_parser!(u8))
                .help("only score these labels"),
        )
        .arg(path_arg("out_csv", "write per-class results as CSV"))
}

fn evaluate_segmentation(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    let gt = path(m, "gt_db_file");
    let class_ids: Option<Vec<u8>> = m.get_many::<u8>("class_ids").map(|v| v.copied().collect());
    let result = evaluate::evaluate_segmentation(&ctx.db, &gt, &ctx.rootdir, class_ids.as_deref())
        .with_context(|| format!("evaluating against {}", gt.display()))?;
    write!(ctx.out, "{result}")?;
    if let Some(csv) = opt_path(m, "out_csv") {
        result.write_csv(&csv)?;
    }
    Ok(())
}

fn serve_args(cmd: Command) -> Command {
    cmd.arg(
        Arg::new("port")
            .long("port")
            .value_parser(value_parser!(u16))
            .default_value("8000"),
    )
    .arg(
        Arg::new("host")
            .long("host")
            .value_parser(value_parser!(std::net::IpAddr))
            .default_value("127.0.0.1"),
    )
    .arg(path_arg("static_dir", "built inspector assets to serve at /"))
}

fn serve(ctx: &mut Context, m: &ArgMatches) -> anyhow::Result<()> {
    let opts = annodb_serve::ServeOptions {
        host: *m.get_one("host").unwrap(),
        port: *m.get_one::<u16>("port").unwrap(),
        static_dir: opt_path(m, "static_dir"),
        rootdir: ctx.rootdir.clone(),
    };
    let db = std::mem::replace(&mut ctx.db, annodb::AnnotationDb::in_memory()?);
    ctx.db = annodb_serve::serve(db, &opts)?;
    Ok(())
}
