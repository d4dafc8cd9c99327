mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use annodb::formats::{self, kitti};
use annodb::{AnnotationDb, BBox, NewObject};
use annodb::store::ImageRecord;

fn kitti_tree(root: &Path, labels: &[(&str, &str)]) {
    for (stem, text) in labels {
        common::write_png(&root.join("images").join(format!("{stem}.png")), 40, 30);
        fs::create_dir_all(root.join("labels")).unwrap();
        fs::write(root.join("labels").join(format!("{stem}.txt")), text).unwrap();
    }
}

const CAR: &str = "Car 0.00 0 1.57 100.0 120.0 200.0 180.0 1.5 1.6 4.0 1.0 2.0 30.0 0.5\n";
const PED: &str = "Pedestrian 0.5 1 -0.2 5 6 15 26 1.7 0.6 0.8 -3 1.5 12 -0.1\n";

#[test]
fn kitti_import_fields_and_integrity() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    kitti_tree(root, &[("000000", CAR), ("000001", &format!("{CAR}{PED}"))]);
    common::write_png(&root.join("images/000002.png"), 40, 30);

    let db = AnnotationDb::in_memory().unwrap();
    let report = formats::import_kitti(&db, root, &root.join("images"), &root.join("labels")).unwrap();
    assert_eq!((report.images_added, report.objects_added), (3, 3));
    assert!(report.skipped.is_empty());
    assert_eq!(db.validate_integrity().unwrap(), vec![]);

    let images = db.images(None).unwrap();
    assert_eq!(images[0].imagefile, "images/000000.png");
    assert_eq!((images[0].width, images[0].height), (Some(40), Some(30)));

    let car = &db.objects(Some("name = 'Car'")).unwrap()[0];
    assert_eq!(car.object.bbox, Some(BBox::new(100.0, 120.0, 100.0, 60.0)));
    assert_eq!(car.property("alpha"), Some("1.57"));
    assert_eq!(car.property("occluded"), Some("0"));
    assert_eq!(car.property("truncated"), Some("0.00"));
    assert_eq!(car.property("rotation_y"), Some("0.5"));
}

#[test]
fn kitti_bad_label_file_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    kitti_tree(root, &[("a", CAR), ("b", "Car 1 2 3\n")]);
    let db = AnnotationDb::in_memory().unwrap();
    let report = formats::import_kitti(&db, root, &root.join("images"), &root.join("labels")).unwrap();
    assert_eq!((report.images_added, report.objects_added), (2, 1));
    assert_eq!(report.skipped.len(), 1);
    assert!(report.skipped[0].path.ends_with("b.txt"));
}

#[test]
fn kitti_empty_detection_dir() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    common::write_png(&root.join("images/x.png"), 4, 4);
    fs::create_dir_all(root.join("labels")).unwrap();
    let db = AnnotationDb::in_memory().unwrap();
    let report = formats::import_kitti(&db, root, &root.join("images"), &root.join("labels")).unwrap();
    assert_eq!((report.images_added, report.objects_added), (1, 0));
}

#[test]
fn kitti_round_trip_is_field_equivalent() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    kitti_tree(root, &[("a", &format!("{CAR}{PED}")), ("b", PED)]);
    let db = AnnotationDb::in_memory().unwrap();
    formats::import_kitti(&db, root, &root.join("images"), &root.join("labels")).unwrap();
    let out = root.join("exported");
    assert_eq!(formats::export_kitti(&db, &out).unwrap(), 2);
    for stem in ["a", "b"] {
        let parse = |p: &Path| kitti::parse_labels(&fs::read_to_string(p).unwrap()).unwrap();
        let original = parse(&root.join("labels").join(format!("{stem}.txt")));
        let exported = parse(&out.join(format!("{stem}.txt")));
        assert_eq!(original.len(), exported.len());
        for (o, e) in original.iter().zip(&exported) {
            assert_eq!(o.name, e.name);
            assert_eq!(o.bbox, e.bbox);
            for ((ko, vo), (ke, ve)) in o.properties.iter().zip(&e.properties) {
                assert_eq!(ko, ke);
                assert_eq!(vo.parse::<f64>().unwrap(), ve.parse::<f64>().unwrap());
            }
        }
    }
}

#[test]
fn kitti_export_needs_boxes() {
    let db = AnnotationDb::in_memory().unwrap();
    db.insert_image(&ImageRecord::new("a.png")).unwrap();
    let id = db.insert_object(&NewObject::new("a.png")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let err = formats::export_kitti(&db, dir.path()).unwrap_err();
    assert!(err.to_string().contains(&id.to_string()));
    assert_eq!(formats::export_kitti(&AnnotationDb::in_memory().unwrap(), dir.path()).unwrap(), 0);
}

#[test]
fn import_twice_gives_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    kitti_tree(root, &[("a", CAR), ("b", PED)]);
    let dump = || {
        let db = AnnotationDb::in_memory().unwrap();
        formats::import_kitti(&db, root, &root.join("images"), &root.join("labels")).unwrap();
        db.dump_tables().unwrap()
    };
    assert_eq!(dump(), dump());
}

const VOC: &str = r#"<annotation>
  <filename>img.jpg</filename>
  <size><width>64</width><height>80</height><depth>3</depth></size>
  <object>
    <name>dog</name><pose>Left</pose><truncated>0</truncated><difficult>1</difficult>
    <bndbox><xmin>10</xmin><ymin>20</ymin><xmax>30</xmax><ymax>60</ymax></bndbox>
  </object>
</annotation>"#;

#[test]
fn pascal_voc_import() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir_all(root.join("Annotations")).unwrap();
    fs::write(root.join("Annotations/img.xml"), VOC).unwrap();
    fs::write(root.join("Annotations/broken.xml"), "<annotation><size>").unwrap();
    let db = AnnotationDb::in_memory().unwrap();
    let report =
        formats::import_pascal_voc(&db, root, &root.join("JPEGImages"), &root.join("Annotations")).unwrap();
    assert_eq!((report.images_added, report.objects_added, report.skipped.len()), (1, 1, 1));
    let image = &db.images(None).unwrap()[0];
    assert_eq!(image.imagefile, "JPEGImages/img.jpg");
    assert_eq!((image.width, image.height), (Some(64), Some(80)));
    let obj = &db.objects(None).unwrap()[0];
    assert_eq!(obj.object.bbox, Some(BBox::new(10.0, 20.0, 20.0, 40.0)));
    assert_eq!(obj.property("difficult"), Some("1"));
    assert_eq!(obj.property("pose"), Some("Left"));
    assert_eq!(db.validate_integrity().unwrap(), vec![]);
}

#[test]
fn pascal_voc_empty_dir() {
    let dir = tempfile::tempdir().unwrap();
    let db = AnnotationDb::in_memory().unwrap();
    let report = formats::import_pascal_voc(&db, dir.path(), dir.path(), dir.path()).unwrap();
    assert_eq!((report.images_added, report.objects_added), (0, 0));
}

const LABELME: &str = r#"<annotation>
  <filename>scene.jpg</filename>
  <imagesize><nrows>100</nrows><ncols>200</ncols></imagesize>
  <object><name>tree</name><deleted>0</deleted>
    <polygon><pt><x>5</x><y>5</y></pt><pt><x>25</x><y>5</y></pt><pt><x>15</x><y>30</y></pt></polygon>
  </object>
  <object><name>ghost</name><deleted>1</deleted>
    <polygon><pt><x>1</x><y>1</y></pt></polygon>
  </object>
  <object><name>house</name><deleted>0</deleted>
    <polygon><pt><x>50</x><y>50</y></pt><pt><x>60</x><y>50</y></pt></polygon>
    <polygon><pt><x>70</x><y>70</y></pt></polygon>
  </object>
</annotation>"#;

#[test]
fn labelme_import() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir_all(root.join("ann")).unwrap();
    fs::write(root.join("ann/scene.xml"), LABELME).unwrap();
    let db = AnnotationDb::in_memory().unwrap();
    let report = formats::import_labelme(&db, root, &root.join("img"), &root.join("ann")).unwrap();
    assert_eq!((report.images_added, report.objects_added), (1, 2));
    let objs = db.objects(None).unwrap();
    let tree = &objs[0];
    assert_eq!(tree.object.name.as_deref(), Some("tree"));
    assert_eq!(tree.object.bbox, None);
    let points: Vec<(f64, f64)> = tree.polygons.iter().map(|p| (p.x, p.y)).collect();
    assert_eq!(points, vec![(5.0, 5.0), (25.0, 5.0), (15.0, 30.0)]);
    assert!(tree.polygons.windows(2).all(|w| w[0].id < w[1].id));
    let names: Vec<Option<&str>> = objs[1].polygons.iter().map(|p| p.name.as_deref()).collect();
    assert_eq!(names, vec![Some("0"), Some("0"), Some("1")]);
    assert_eq!(db.validate_integrity().unwrap(), vec![]);
}

#[test]
fn csv_quotes_and_parses_back() {
    let db = AnnotationDb::in_memory().unwrap();
    db.insert_image(&ImageRecord::new("dir,with,commas/a \"b\".png")).unwrap();
    db.insert_object(
        &NewObject::new("dir,with,commas/a \"b\".png")
            .with_box(BBox::new(1.5, 2.0, 3.0, 4.25))
            .with_name("car, red")
            .with_score(0.75),
    )
    .unwrap();
    db.insert_object(&NewObject::new("dir,with,commas/a \"b\".png")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    assert_eq!(formats::export_csv(&db, &path).unwrap(), 2);
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3);

    let mut reader = csv::Reader::from_path(&path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, formats::CSV_HEADER);
    let rows: Vec<BTreeMap<String, String>> = reader
        .records()
        .map(|r| header.iter().cloned().zip(r.unwrap().iter().map(String::from)).collect())
        .collect();
    assert_eq!(rows[0]["imagefile"], "dir,with,commas/a \"b\".png");
    assert_eq!(rows[0]["name"], "car, red");
    assert_eq!(rows[0]["x"].parse::<f64>().unwrap(), 1.5);
    assert_eq!(rows[0]["height"].parse::<f64>().unwrap(), 4.25);
    assert_eq!(rows[0]["score"].parse::<f64>().unwrap(), 0.75);
    assert_eq!(rows[1]["x"], "");
}

#[test]
fn csv_empty_db_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    assert_eq!(formats::export_csv(&AnnotationDb::in_memory().unwrap(), &path).unwrap(), 0);
    assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1);
}
