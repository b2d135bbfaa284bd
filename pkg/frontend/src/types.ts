/** Payload shapes of the session service API (the compatibility contract). */

export interface Posterior {
  level: number;
  mean: number[];
  lo: number[];
  hi: number[];
}

export interface Recommendation {
  filter_id: string;
  eig_scores: Record<string, number> | null;
  posterior: Posterior;
}

export interface Step {
  t: number;
  filter_id: string;
  count: number;
  strategy: string;
  override: boolean;
  eig_scores: Record<string, number> | null;
  ig_realized: number;
  ess: number;
  resampled: boolean;
  posterior: Posterior;
  timestamp: string;
}

export interface SessionSummary {
  id: string;
  status: string;
  created_at: string;
  updated_at: string;
  strategy: string;
  t: number;
  t_max: number | null;
  n_particles: number;
  filter_ids: string[];
  template_names: string[];
}

export interface History {
  id: string;
  status: string;
  ig_threshold: number;
  template_names: string[];
  prior_posterior: Posterior;
  steps: Step[];
}

export interface ObservationResult {
  step: Step;
  stopped: boolean;
  status: string;
  posterior: Posterior;
}

export interface ApiError {
  code: string;
  message: string;
  details?: unknown;
}
