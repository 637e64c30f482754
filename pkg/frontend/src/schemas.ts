/**
 * Zod mirrors of the service's response schemas. Every payload crossing the
 * client layer is validated here; anything that fails renders as an error.
 */

import { z } from "zod";

const atcCode = z.string().regex(/^[A-Z][0-9]{2}[A-Z]{2}[0-9]{2}$/);
const meshCode = z.string().regex(/^[A-Z][0-9]+$/);

export const spanSchema = z
  .object({
    start: z.number().int().nonnegative(),
    end: z.number().int().nonnegative(),
    code: z.string().min(1),
    kind: z.enum(["drug", "disease"]),
    surface: z.string(),
  })
  .strict();

export const paragraphSchema = z
  .object({
    paper_id: z.string().min(1),
    paragraph_id: z.string().min(1),
    title: z.string(),
    section: z.string(),
    text: z.string(),
    spans: z.array(spanSchema),
  })
  .strict();

export const searchSchema = z
  .object({
    query: z.string(),
    resolved: z
      .object({
        kind: z.enum(["drug", "disease"]),
        code: z.string().min(1),
        label: z.string(),
      })
      .strict(),
    total: z.number().int().nonnegative(),
    page: z
      .object({
        offset: z.number().int().nonnegative(),
        limit: z.number().int().positive(),
      })
      .strict(),
    paragraphs: z.array(paragraphSchema),
    related_drugs: z.array(
      z.object({ atc_code: atcCode, label: z.string(), score: z.number() }).strict(),
    ),
    related_diseases: z.array(
      z.object({ mesh_code: meshCode, label: z.string(), score: z.number() }).strict(),
    ),
  })
  .strict();

export const replacementsSchema = z.array(
  z
    .object({
      atc_code: atcCode,
      label: z.string(),
      score: z.number().min(-1.0000000001).max(1.0000000001),
    })
    .strict(),
);

export const relatedDrugsSchema = z.array(
  z
    .object({ atc_code: atcCode, label: z.string(), score: z.number().nonnegative() })
    .strict(),
);

export const relatedDiseasesSchema = z.array(
  z
    .object({ mesh_code: meshCode, label: z.string(), score: z.number().nonnegative() })
    .strict(),
);

export const diseaseNeighborsSchema = z.array(
  z
    .object({ mesh_code: meshCode, label: z.string(), distance: z.number().nonnegative() })
    .strict(),
);

export const healthSchema = z
  .object({
    status: z.string(),
    documents: z.number().int().nonnegative(),
    paragraphs: z.number().int().nonnegative(),
    triples: z.number().int().nonnegative(),
  })
  .strict();

export const errorSchema = z
  .object({
    error: z.enum(["unknown_term", "bad_pagination", "bad_request", "bad_query"]),
    message: z.string(),
  })
  .strict();

export type Span = z.infer<typeof spanSchema>;
export type Paragraph = z.infer<typeof paragraphSchema>;
export type SearchResponse = z.infer<typeof searchSchema>;
export type Replacement = z.infer<typeof replacementsSchema>[number];
export type RelatedDrug = z.infer<typeof relatedDrugsSchema>[number];
export type RelatedDisease = z.infer<typeof relatedDiseasesSchema>[number];
export type ErrorBody = z.infer<typeof errorSchema>;
