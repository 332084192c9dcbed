#include "rmnet/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <regex>
#include <set>
#include <sstream>
#include <tuple>

#include <fmt/format.h>

#include "rmnet/random.hpp"

#ifdef RMNET_HAVE_JPEG
#include <csetjmp>
#include <cstdio>

#include <jpeglib.h>
#endif

namespace rmnet {

namespace fs = std::filesystem;

namespace {

const char* kSplitFolders[] = {"bounding_box_train", "query", "bounding_box_test"};

std::uint8_t quantize(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// Next whitespace-separated header token, skipping '#' comments.
std::string ppm_token(std::istream& in, const fs::path& path) {
    std::string token;
    while (true) {
        const int c = in.get();
        if (c == EOF) throw IoError("truncated PPM header in " + path.string());
        if (c == '#') {
            std::string comment;
            std::getline(in, comment);
            continue;
        }
        if (std::isspace(c)) {
            if (!token.empty()) return token;
            continue;
        }
        token.push_back(static_cast<char>(c));
    }
}

#ifdef RMNET_HAVE_JPEG
struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

Image read_jpeg(const fs::path& path) {
    std::FILE* file = std::fopen(path.c_str(), "rb");
    if (!file) throw IoError("cannot open image " + path.string());
    jpeg_decompress_struct info{};
    JpegErrorManager err{};
    info.err = jpeg_std_error(&err.base);
    err.base.error_exit = [](j_common_ptr cinfo) {
        auto* mgr = reinterpret_cast<JpegErrorManager*>(cinfo->err);
        (*cinfo->err->format_message)(cinfo, mgr->message);
        std::longjmp(mgr->jump, 1);
    };
    // Declared before setjmp so nothing with a destructor is skipped by the jump.
    Image image;
    std::vector<JSAMPLE> row;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&info);
        std::fclose(file);
        throw IoError("cannot decode JPEG " + path.string() + ": " + err.message);
    }
    jpeg_create_decompress(&info);
    jpeg_stdio_src(&info, file);
    jpeg_read_header(&info, TRUE);
    info.out_color_space = JCS_RGB;
    jpeg_start_decompress(&info);
    image = Image(info.output_height, info.output_width);
    row.resize(static_cast<std::size_t>(info.output_width) * 3);
    while (info.output_scanline < info.output_height) {
        const std::size_t y = info.output_scanline;
        JSAMPROW rows[1] = {row.data()};
        jpeg_read_scanlines(&info, rows, 1);
        for (std::size_t i = 0; i < row.size(); ++i) image.pixels[y * row.size() + i] = row[i] / 255.0f;
    }
    jpeg_finish_decompress(&info);
    jpeg_destroy_decompress(&info);
    std::fclose(file);
    return image;
}
#endif

// h, s, v in [0, 1].
std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double sector = h * 6.0;
    const int i = static_cast<int>(sector) % 6;
    const double f = sector - std::floor(sector);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    double r = v, g = t, b = p;
    switch (i) {
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        case 5: r = v; g = p; b = q; break;
        default: break;
    }
    return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

struct IdentityLook {
    double shirt_hue, trouser_hue, body_width, head_size, band_period, band_phase;
};

struct CameraLook {
    std::array<double, 3> tint;
    Index dx, dy;
};

// Ranges of the identity attributes, used to scale per-image jitter.
constexpr double kBodyWidth[2] = {0.45, 0.75};
constexpr double kHeadSize[2] = {0.07, 0.12};
constexpr double kBandPeriod[2] = {6.0, 20.0};

Image render_person(const SynthSpec& spec, const IdentityLook& look, const CameraLook& cam, Rng& rng,
                    std::vector<double>& realized) {
    const double j = spec.attribute_jitter;
    const double shirt_hue = look.shirt_hue + j * rng.normal();
    const double trouser_hue = look.trouser_hue + j * rng.normal();
    const double body_width = look.body_width + j * (kBodyWidth[1] - kBodyWidth[0]) * rng.normal();
    const double head_size = look.head_size + j * (kHeadSize[1] - kHeadSize[0]) * rng.normal();
    const double band_period = look.band_period + j * (kBandPeriod[1] - kBandPeriod[0]) * rng.normal();
    const double band_phase = look.band_phase + j * rng.normal();
    realized = {shirt_hue, trouser_hue, body_width, head_size, band_period, band_phase};

    const double gain = 1.0 + spec.illumination_jitter * rng.uniform(-1.0, 1.0);
    const Index shift_x = static_cast<Index>(rng.index(static_cast<std::uint64_t>(2 * spec.pose_shift + 1))) -
                          spec.pose_shift + cam.dx;
    const Index shift_y = static_cast<Index>(rng.index(static_cast<std::uint64_t>(2 * spec.pose_shift + 1))) -
                          spec.pose_shift + cam.dy;
    const auto background = hsv_to_rgb(rng.uniform(), rng.uniform(0.0, 0.25), rng.uniform(0.25, 0.75));
    const double bg_slope = rng.uniform(-0.2, 0.2);

    const auto shirt = hsv_to_rgb(shirt_hue, 0.75, 0.9);
    const auto trouser = hsv_to_rgb(trouser_hue, 0.6, 0.55);
    const std::array<float, 3> skin{0.92f, 0.76f, 0.62f};

    const double H = static_cast<double>(spec.height), W = static_cast<double>(spec.width);
    const double cx = W / 2.0 + static_cast<double>(shift_x);
    const double head_ry = head_size * H;
    const double head_rx = head_ry * 0.7;
    const double head_cy = 0.04 * H + head_ry + static_cast<double>(shift_y);
    const double torso_top = head_cy + head_ry;
    const double torso_bottom = 0.56 * H + static_cast<double>(shift_y);
    const double legs_bottom = 0.97 * H + static_cast<double>(shift_y);
    const double half_body = body_width * W / 2.0;
    const double leg_gap = 0.06 * W;

    Image image(spec.height, spec.width);
    for (Index y = 0; y < spec.height; ++y) {
        const double fy = static_cast<double>(y) + 0.5;
        for (Index x = 0; x < spec.width; ++x) {
            const double fx = static_cast<double>(x) + 0.5;
            std::array<float, 3> color = background;
            const double shade = 1.0 + bg_slope * (fy / H - 0.5);
            for (float& c : color) c = static_cast<float>(c * shade);
            const double ex = (fx - cx) / head_rx, ey = (fy - head_cy) / head_ry;
            if (ex * ex + ey * ey <= 1.0) {
                color = skin;
            } else if (fy >= torso_top && fy < torso_bottom && std::abs(fx - cx) <= half_body) {
                const double band = 0.75 + 0.25 * std::sin(2.0 * std::numbers::pi * (fy / band_period + band_phase));
                for (int c = 0; c < 3; ++c) color[c] = static_cast<float>(shirt[c] * band);
            } else if (fy >= torso_bottom && fy < legs_bottom && std::abs(fx - cx) <= half_body * 0.85 &&
                       std::abs(fx - cx) >= leg_gap / 2.0) {
                color = trouser;
            }
            for (int c = 0; c < 3; ++c) {
                const double v = color[c] * gain * cam.tint[c] + spec.pixel_noise * rng.normal();
                image.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return image;
}

std::vector<int> shuffled_slots(int n, Rng& rng) {
    std::vector<int> slots(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) slots[static_cast<std::size_t>(i)] = i;
    for (std::size_t i = slots.size(); i > 1; --i) std::swap(slots[i - 1], slots[rng.index(i)]);
    return slots;
}

void assign_labels(Dataset& dataset) {
    std::set<int> ids;
    for (const auto& r : dataset.train) ids.insert(r.identity);
    dataset.class_identities.assign(ids.begin(), ids.end());
    std::map<int, int> label_of;
    for (std::size_t i = 0; i < dataset.class_identities.size(); ++i) {
        label_of[dataset.class_identities[i]] = static_cast<int>(i);
    }
    for (auto& r : dataset.train) r.label = label_of.at(r.identity);
}

}  // namespace

void write_ppm(const Image& image, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image " + path.string());
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    std::vector<char> bytes(image.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>(quantize(image.pixels[i]));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing image " + path.string());
}

Image read_ppm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path.string());
    if (ppm_token(in, path) != "P6") throw IoError("not a binary PPM: " + path.string());
    Index width = 0, height = 0;
    int maxval = 0;
    try {
        width = std::stol(ppm_token(in, path));
        height = std::stol(ppm_token(in, path));
        maxval = std::stoi(ppm_token(in, path));
    } catch (const std::logic_error&) {
        throw IoError("malformed PPM header in " + path.string());
    }
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
        throw IoError("unsupported PPM geometry or depth in " + path.string());
    }
    Image image(height, width);
    std::vector<char> bytes(image.pixels.size());
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw IoError("truncated PPM pixel data in " + path.string());
    }
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        image.pixels[i] = static_cast<float>(static_cast<std::uint8_t>(bytes[i])) / static_cast<float>(maxval);
    }
    return image;
}

bool jpeg_supported() {
#ifdef RMNET_HAVE_JPEG
    return true;
#else
    return false;
#endif
}

Image read_image(const fs::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".ppm") return read_ppm(path);
    if (ext == ".jpg" || ext == ".jpeg") {
#ifdef RMNET_HAVE_JPEG
        return read_jpeg(path);
#else
        throw IoError("JPEG support not built in, cannot read " + path.string());
#endif
    }
    throw IoError("unsupported image format: " + path.string());
}

Image resize_bilinear(const Image& image, Index height, Index width) {
    if (image.height == height && image.width == width) return image;
    if (height <= 0 || width <= 0) throw DimensionError("resize target must be positive");
    Image out(height, width);
    const double sy = static_cast<double>(image.height) / static_cast<double>(height);
    const double sx = static_cast<double>(image.width) / static_cast<double>(width);
    for (Index y = 0; y < height; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                     static_cast<double>(image.height - 1));
        const Index y0 = static_cast<Index>(fy), y1 = std::min(y0 + 1, image.height - 1);
        const double wy = fy - static_cast<double>(y0);
        for (Index x = 0; x < width; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                         static_cast<double>(image.width - 1));
            const Index x0 = static_cast<Index>(fx), x1 = std::min(x0 + 1, image.width - 1);
            const double wx = fx - static_cast<double>(x0);
            for (Index c = 0; c < 3; ++c) {
                const double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
                const double bottom = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
                out.at(y, x, c) = static_cast<float>(top * (1 - wy) + bottom * wy);
            }
        }
    }
    return out;
}

Image flip_horizontal(const Image& image) {
    Image out(image.height, image.width);
    for (Index y = 0; y < image.height; ++y) {
        for (Index x = 0; x < image.width; ++x) {
            for (Index c = 0; c < 3; ++c) out.at(y, image.width - 1 - x, c) = image.at(y, x, c);
        }
    }
    return out;
}

std::string to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::query: return "query";
        case Split::gallery: return "gallery";
    }
    return "unknown";
}

std::optional<MarketName> parse_market_name(const std::string& stem) {
    static const std::regex pattern(R"(^(-1|\d{4})_c(\d)s(\d)_(\d{6})_(\d{2})$)");
    std::smatch m;
    if (!std::regex_match(stem, m, pattern)) return std::nullopt;
    MarketName name;
    name.identity = std::stoi(m[1]);
    name.camera = std::stoi(m[2]);
    name.sequence = std::stoi(m[3]);
    name.frame = std::stoi(m[4]);
    name.box = std::stoi(m[5]);
    return name;
}

std::string format_market_name(const MarketName& name) {
    const std::string id = name.identity < 0 ? std::to_string(name.identity) : fmt::format("{:04d}", name.identity);
    return fmt::format("{}_c{}s{}_{:06d}_{:02d}", id, name.camera, name.sequence, name.frame, name.box);
}

Image load_pixels(const LabeledImage& record) {
    if (record.pixels) return *record.pixels;
    return read_image(record.path);
}

Dataset load_market_layout(const fs::path& root) {
    if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root.string());
    Dataset dataset;
    const Split splits[] = {Split::train, Split::query, Split::gallery};
    for (int s = 0; s < 3; ++s) {
        const fs::path dir = root / kSplitFolders[s];
        if (!fs::is_directory(dir)) throw DatasetError("missing split folder " + dir.string());
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file()) files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        std::vector<std::pair<MarketName, fs::path>> named;
        for (const auto& file : files) {
            const auto name = parse_market_name(file.stem().string());
            if (!name) {
                ++dataset.skipped_files;
                warn("skipping file with unrecognized name: " + file.string());
                continue;
            }
            named.emplace_back(*name, file);
        }
        // Records come out ordered by (identity, frame), independent of directory order.
        std::stable_sort(named.begin(), named.end(), [](const auto& a, const auto& b) {
            const auto key = [](const MarketName& n) {
                return std::tuple(n.identity, n.frame, n.camera, n.sequence, n.box);
            };
            return key(a.first) < key(b.first);
        });
        auto& out = s == 0 ? dataset.train : s == 1 ? dataset.query : dataset.gallery;
        for (const auto& [parsed, file] : named) {
            const auto* name = &parsed;
            // Junk boxes are ignored by the benchmark protocol; distractors only serve as gallery negatives.
            if (name->identity < 0) continue;
            if (name->identity == 0 && splits[s] != Split::gallery) continue;
            LabeledImage record;
            record.identity = name->identity == 0 ? kDistractorIdentity : name->identity;
            record.camera = name->camera;
            record.split = splits[s];
            record.name = file.stem().string();
            record.path = file;
            out.push_back(std::move(record));
        }
        if (out.empty()) throw DatasetError(std::string("split ") + kSplitFolders[s] + " is empty");
    }
    assign_labels(dataset);
    return dataset;
}

std::size_t write_market_layout(const Dataset& dataset, const fs::path& root) {
    std::size_t count = 0;
    const std::vector<LabeledImage>* splits[] = {&dataset.train, &dataset.query, &dataset.gallery};
    for (int s = 0; s < 3; ++s) {
        const fs::path dir = root / kSplitFolders[s];
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
        for (const auto& record : *splits[s]) {
            write_ppm(load_pixels(record), dir / (record.name + ".ppm"));
            ++count;
        }
    }
    return count;
}

void SynthSpec::validate() const {
    std::vector<std::string> problems;
    if (num_identities < 2) problems.push_back("num_identities must be at least 2");
    if (query_per_identity < 1) problems.push_back("query_per_identity must be at least 1");
    if (gallery_per_identity < 1) problems.push_back("gallery_per_identity must be at least 1");
    if (train_per_identity() < 1) problems.push_back("images_per_identity leaves no training images");
    if (num_cameras <= query_per_identity) {
        problems.push_back("num_cameras must exceed query_per_identity for cross-camera galleries");
    }
    if (num_cameras > 9) problems.push_back("num_cameras must fit one filename digit");
    if (height < 32 || width < 16) problems.push_back("image size must be at least 32x16");
    if (num_identities > 9999) problems.push_back("num_identities must fit four filename digits");
    if (images_per_identity > 999999) problems.push_back("images_per_identity must fit the frame field");
    if (!problems.empty()) {
        std::string message = "invalid synthetic spec:";
        for (const auto& p : problems) message += " " + p + ";";
        throw ConfigError(message);
    }
}

SynthDataset generate_synthetic(const SynthSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng look_rng(derive_seed(seed, 1));
    const auto shirt_slots = shuffled_slots(spec.num_identities, look_rng);
    const auto trouser_slots = shuffled_slots(spec.num_identities, look_rng);
    const double n = static_cast<double>(spec.num_identities);
    std::vector<IdentityLook> looks;
    for (int i = 0; i < spec.num_identities; ++i) {
        IdentityLook look{};
        look.shirt_hue = (shirt_slots[static_cast<std::size_t>(i)] + look_rng.uniform(0.3, 0.7)) / n;
        look.trouser_hue = (trouser_slots[static_cast<std::size_t>(i)] + look_rng.uniform(0.3, 0.7)) / n;
        look.body_width = look_rng.uniform(kBodyWidth[0], kBodyWidth[1]);
        look.head_size = look_rng.uniform(kHeadSize[0], kHeadSize[1]);
        look.band_period = look_rng.uniform(kBandPeriod[0], kBandPeriod[1]);
        look.band_phase = look_rng.uniform();
        looks.push_back(look);
    }
    Rng cam_rng(derive_seed(seed, 2));
    std::vector<CameraLook> cameras;
    for (int c = 0; c < spec.num_cameras; ++c) {
        // Warm cameras push red up and blue down, cool cameras the reverse.
        const double temperature = cam_rng.uniform(-0.1, 0.1);
        CameraLook cam{};
        cam.tint = {1.0 + temperature, 1.0 + 0.3 * cam_rng.uniform(-0.1, 0.1), 1.0 - temperature};
        cam.dx = static_cast<Index>(cam_rng.index(7)) - 3;
        cam.dy = static_cast<Index>(cam_rng.index(7)) - 3;
        cameras.push_back(cam);
    }

    SynthDataset out;
    auto& ds = out.dataset;
    for (int id = 0; id < spec.num_identities; ++id) {
        Rng rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(id)));
        std::vector<int> cams(static_cast<std::size_t>(spec.images_per_identity));
        for (auto& c : cams) c = static_cast<int>(rng.index(static_cast<std::uint64_t>(spec.num_cameras)));
        // The first gallery image uses a camera no query image uses.
        std::set<int> query_cams(cams.begin(), cams.begin() + spec.query_per_identity);
        int free_cam = 0;
        while (query_cams.count(free_cam)) ++free_cam;
        cams[static_cast<std::size_t>(spec.query_per_identity)] = free_cam;

        for (int k = 0; k < spec.images_per_identity; ++k) {
            const int cam = cams[static_cast<std::size_t>(k)];
            SynthAttributes attrs;
            attrs.identity = id + 1;
            attrs.camera = cam + 1;
            auto image = std::make_shared<Image>(render_person(spec, looks[static_cast<std::size_t>(id)],
                                                               cameras[static_cast<std::size_t>(cam)], rng,
                                                               attrs.values));
            LabeledImage record;
            record.identity = id + 1;
            record.camera = cam + 1;
            record.name = format_market_name({id + 1, cam + 1, 1, k, 1});
            record.pixels = std::move(image);
            if (k < spec.query_per_identity) {
                record.split = Split::query;
                ds.query.push_back(std::move(record));
            } else if (k < spec.query_per_identity + spec.gallery_per_identity) {
                record.split = Split::gallery;
                ds.gallery.push_back(std::move(record));
            } else {
                record.split = Split::train;
                ds.train.push_back(std::move(record));
            }
            out.attributes.push_back(std::move(attrs));
        }
    }
    assign_labels(ds);
    return out;
}

template <typename S>
Tensor<S> to_model_input(std::span<const Image> images, Index height, Index width, double mean, double stddev) {
    if (images.empty()) throw DimensionError("to_model_input: no images");
    if (!(stddev > 0.0)) throw ConfigError("pixel std must be positive");
    const Index n = static_cast<Index>(images.size());
    Buffer<S> values(n * 3 * height * width);
    const double inv = 1.0 / stddev;
    for (Index i = 0; i < n; ++i) {
        const Image& src = images[static_cast<std::size_t>(i)];
        const Image resized = (src.height == height && src.width == width) ? Image() : resize_bilinear(src, height, width);
        const Image& img = resized.pixels.empty() ? src : resized;
        for (Index c = 0; c < 3; ++c) {
            S* plane = values.data() + ((i * 3 + c) * height) * width;
            for (Index y = 0; y < height; ++y) {
                for (Index x = 0; x < width; ++x) {
                    plane[y * width + x] = static_cast<S>((img.at(y, x, c) - mean) * inv);
                }
            }
        }
    }
    return Tensor<S>({n, 3, height, width}, std::move(values));
}

template Tensor<float> to_model_input<float>(std::span<const Image>, Index, Index, double, double);
template Tensor<double> to_model_input<double>(std::span<const Image>, Index, Index, double, double);

}  // namespace rmnet
