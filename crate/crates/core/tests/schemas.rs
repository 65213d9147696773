use std::path::PathBuf;

use fairmask::data;
use fairmask::DatasetSchema;

fn bundled(name: &str) -> DatasetSchema {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    DatasetSchema::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn bundled_schemas_load() {
    let adult = bundled("adult.toml");
    assert_eq!(adult.sensitive_columns[0].mask_value().unwrap(), 0.0);
    assert_eq!(adult.sensitive_columns[0].encode("Female").unwrap(), 1.0);
    assert_eq!(bundled("adult_sex_race.toml").sensitive_columns.len(), 2);
    let german = bundled("german.toml");
    let age = &german.sensitive_columns[0];
    assert_eq!((age.encode("25").unwrap(), age.encode("26").unwrap()), (1.0, 0.0));
    assert_eq!(bundled("compas.toml").label_column, "two_year_recid");
}

#[test]
fn adult_rows_encode() {
    let schema = bundled("adult.toml");
    let csv = "age,workclass,fnlwgt,education,education-num,marital-status,occupation,relationship,race,sex,capital-gain,capital-loss,hours-per-week,native-country,income\n\
               39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, <=50K\n\
               50, Self-emp-not-inc, 83311, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 13, United-States, <=50K\n\
               38, Private, 215646, HS-grad, 9, Divorced, Handlers-cleaners, Not-in-family, White, Female, 0, 0, 40, ?, >50K\n\
               53, Private, 234721, 11th, 7, Married-civ-spouse, Handlers-cleaners, Husband, Black, Female, 0, 0, 40, United-States, >50K\n";
    let table = data::read_csv(csv.as_bytes(), &schema).unwrap();
    assert_eq!((table.parsed, table.dropped), (4, 1));
    let pre = data::preprocess(&table, &schema, data::PlanSource::FitOnTrain).unwrap();
    assert_eq!(pre.dataset.labels(), &[0, 0, 1]);
    assert_eq!(pre.dataset.protected_flags(0), vec![false, false, true]);
}
