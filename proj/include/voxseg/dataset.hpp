#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxseg/volume.hpp"
#include "voxseg/volume_io.hpp"

// On-disk dataset layout: patient_{i}_img.vvol / patient_{i}_lbl.vvol pairs
// plus manifest.csv with header
//   patient,split,count_class_0,...,count_class_{L-1}
// Patients are numbered globally, training split first.

namespace voxseg {

struct Patient {
    ScalarVolume image;
    LabelVolume labels;
};

using Dataset = std::vector<Patient>;

namespace detail {

inline std::vector<std::uint64_t> label_histogram(const LabelVolume& v) {
    std::vector<std::uint64_t> h(std::size_t(v.num_classes), 0);
    for (std::uint8_t l : v.labels)
        ++h[l];
    return h;
}

inline std::string image_name(int patient) {
    return "patient_" + std::to_string(patient) + "_img.vvol";
}
inline std::string label_name(int patient) {
    return "patient_" + std::to_string(patient) + "_lbl.vvol";
}

} // namespace detail

inline void save_dataset(const std::filesystem::path& dir, const Dataset& train,
                         const Dataset& test) {
    if (train.empty() && test.empty())
        throw std::invalid_argument("save_dataset: nothing to save");
    std::filesystem::create_directories(dir);
    std::string manifest = "patient,split";
    const int L = (train.empty() ? test : train).front().labels.num_classes;
    for (int l = 0; l < L; ++l)
        manifest += ",count_class_" + std::to_string(l);
    manifest += "\n";
    int id = 0;
    auto emit = [&](const Dataset& set, const char* split) {
        for (const Patient& p : set) {
            if (p.labels.num_classes != L)
                throw std::invalid_argument("save_dataset: mixed class counts");
            write_volume(p.image, dir / detail::image_name(id));
            write_volume(p.labels, dir / detail::label_name(id));
            manifest += std::to_string(id) + "," + split;
            for (std::uint64_t c : detail::label_histogram(p.labels))
                manifest += "," + std::to_string(c);
            manifest += "\n";
            ++id;
        }
    };
    emit(train, "train");
    emit(test, "test");
    std::ofstream f(dir / "manifest.csv", std::ios::trunc);
    if (!f)
        throw std::runtime_error("save_dataset: cannot write manifest in " + dir.string());
    f << manifest;
    if (!f)
        throw std::runtime_error("save_dataset: short manifest write in " + dir.string());
}

struct LoadedDataset {
    Dataset train;
    Dataset test;
};

inline LoadedDataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.csv");
    if (!f)
        throw std::runtime_error("load_dataset: cannot open " + (dir / "manifest.csv").string());
    std::string line;
    if (!std::getline(f, line))
        throw std::runtime_error("load_dataset: empty manifest in " + dir.string());
    LoadedDataset out;
    while (std::getline(f, line)) {
        if (line.empty())
            continue;
        std::stringstream row(line);
        std::string id_str, split;
        if (!std::getline(row, id_str, ',') || !std::getline(row, split, ','))
            throw std::runtime_error("load_dataset: malformed manifest row: " + line);
        const int id = std::stoi(id_str);
        Patient p;
        p.image = read_scalar_volume(dir / detail::image_name(id));
        p.labels = read_label_volume(dir / detail::label_name(id));
        if (!(p.image.shape == p.labels.shape))
            throw std::runtime_error("load_dataset: image/label shape mismatch for patient " +
                                     id_str);
        if (split == "train")
            out.train.push_back(std::move(p));
        else if (split == "test")
            out.test.push_back(std::move(p));
        else
            throw std::runtime_error("load_dataset: unknown split '" + split + "' for patient " +
                                     id_str);
    }
    if (out.train.empty() && out.test.empty())
        throw std::runtime_error("load_dataset: manifest lists no patients in " + dir.string());
    return out;
}

} // namespace voxseg
