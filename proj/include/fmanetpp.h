/* C interface to the video super-resolution + deblurring engine.
 *
 * Every function returns 0 on success or a nonzero error code; the message
 * for the most recent failure on the calling thread is available through
 * fmanetpp_last_error(). Model handles are opaque and must be released with
 * fmanetpp_model_free().
 */
#ifndef FMANETPP_H
#define FMANETPP_H

#ifdef __cplusplus
extern "C" {
#endif

#define FMANETPP_OK 0
#define FMANETPP_ERR_INVALID 1  /* bad arguments, config or data */
#define FMANETPP_ERR_IO 2       /* filesystem failures */
#define FMANETPP_ERR_INTERNAL 3 /* anything else */

typedef struct fmanetpp_model fmanetpp_model;

const char* fmanetpp_last_error(void);

/* Worker thread count for data generation, training and evaluation.
 * n <= 0 restores the hardware default. Also set by FMANETPP_THREADS. */
void fmanetpp_set_threads(int n);

/* Synthetic dataset generation. mode: "me" (five constant exposure levels
 * per scene) or "re" (random exposure trajectories). */
int fmanetpp_synth(const char* config_path, const char* out_dir, const char* mode);

/* Stage 1: contrastive pretraining of the exposure extractor. */
int fmanetpp_pretrain_ete(const char* config_path, const char* data_dir, const char* out_ckpt);

/* Stage 2: degradation network training. resume_ckpt may be NULL. */
int fmanetpp_train_netd(const char* config_path, const char* data_dir, const char* ete_ckpt,
                        const char* out_dir, const char* resume_ckpt);

/* Stage 3: joint training starting from a stage-2 checkpoint. */
int fmanetpp_train_joint(const char* config_path, const char* data_dir, const char* netd_ckpt,
                         const char* out_dir, const char* resume_ckpt);

/* Grid-driven ablation sweep; writes <out_dir>/ablation.csv. */
int fmanetpp_ablate(const char* config_path, const char* grid_path, const char* data_dir,
                    const char* ete_ckpt, const char* out_dir);

/* Full-sequence evaluation of a checkpoint on a dataset split.
 * baseline: NULL/"" for the model, "bilinear" for the upsampling baseline.
 * force_ete_level: 0 uses per-frame guidance, 1..5 forces a level. */
int fmanetpp_evaluate(const char* ckpt, const char* data_dir, const char* split,
                      const char* out_dir, const char* baseline, int force_ete_level);

/* Restores a directory of PNG frames (lexicographic order). */
int fmanetpp_restore_dir(const char* ckpt, const char* in_dir, const char* out_dir);

/* In-process restoration over raw float buffers. */
int fmanetpp_model_load(const char* ckpt, fmanetpp_model** out);
void fmanetpp_model_free(fmanetpp_model* model);
int fmanetpp_model_scale(const fmanetpp_model* model);

/* frames: t*h*w*3 floats in [0,1], row-major; out must hold
 * t*(s*h)*(s*w)*3 floats where s = fmanetpp_model_scale(). */
int fmanetpp_model_restore(fmanetpp_model* model, const float* frames, int t, int h, int w,
                           float* out);

#ifdef __cplusplus
}
#endif

#endif /* FMANETPP_H */
