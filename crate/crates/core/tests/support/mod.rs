pub mod canny_oracle;
