// Writes the bundled synthetic dataset: eight centers drawn from the
// Weibull/inverse-Gaussian mixture, doses on a 1/256 grid so that the CSV
// round-trips exactly.

#include <iostream>

#include "stacksurv/simulation.hpp"

using namespace stacksurv;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_example_data <output.csv>\n";
    return 1;
  }
  StudyDesignSpec design;
  design.n_centers = 8;
  design.subjects_mean = 12.0;
  design.dose_quantum = 1.0 / 256.0;
  Rng rng(20240601);
  try {
    const SimulatedData sim = generate_study_data(design, TruthSpec::weibull_ig(), rng);
    write_csv(sim.data, std::filesystem::path(argv[1]));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
